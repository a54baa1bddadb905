//! Model coefficients shared by every layer.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("bulk coefficient a must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("bulk coefficient c must be positive, got {0}")]
    NonPositiveC(f64),
    #[error("time shift lambda1 must be >= 0, got {0}")]
    NegativeLambda1(f64),
    #[error("dimension must be 2 or 3, got {0}")]
    BadDim(usize),
}

/// Coefficients of the coupled system: Landau-de Gennes bulk constants
/// `a`, `b`, `c`, the tumbling parameter `xi_a`, and the derived coupling
/// `beta = 2 xi_a / N` that ties the velocity and tensor equations together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub b_coef: f64,
    pub c_coef: f64,
    /// Tumbling/alignment ratio.
    pub xi_a: f64,
    /// Coupling constant, always `2 * xi_a / dim`.
    pub beta: f64,
    /// Elastic constant of the one-constant gradient energy, fixed at 1.
    pub elastic_l: f64,
    /// Time shift used by the shifted/compensation splitting.
    pub lambda1: f64,
    /// Spatial dimension N.
    pub dim: usize,
    /// Evaluate the bulk term of `g` from the literal F' text instead of the
    /// energy-consistent derivative (flips the sign of the quadratic term and
    /// drops the coupled bulk correction in `f`). Off by default.
    pub paper_literal_fprime: bool,
}

impl ModelParams {
    pub fn new(a: f64, b_coef: f64, c_coef: f64, xi_a: f64, dim: usize) -> Result<Self, ParamsError> {
        if !(dim == 2 || dim == 3) {
            return Err(ParamsError::BadDim(dim));
        }
        if !(a > 0.0) {
            return Err(ParamsError::NonPositiveA(a));
        }
        if !(c_coef > 0.0) {
            return Err(ParamsError::NonPositiveC(c_coef));
        }
        Ok(Self {
            a,
            b_coef,
            c_coef,
            xi_a,
            beta: 2.0 * xi_a / dim as f64,
            elastic_l: 1.0,
            lambda1: 1.0,
            dim,
            paper_literal_fprime: false,
        })
    }

    pub fn with_lambda1(mut self, lambda1: f64) -> Result<Self, ParamsError> {
        if lambda1 < 0.0 {
            return Err(ParamsError::NegativeLambda1(lambda1));
        }
        self.lambda1 = lambda1;
        Ok(self)
    }

    /// Default parameter set used by tests and experiment drivers.
    pub fn default_for_dim(dim: usize) -> Self {
        Self::new(1.0, 0.0, 1.0, 0.5, dim).expect("default params are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_is_tied_to_xi_a() {
        let p = ModelParams::new(1.0, 0.2, 1.0, 0.75, 3).unwrap();
        assert_eq!(p.beta, 2.0 * 0.75 / 3.0);
    }

    #[test]
    fn rejects_nonpositive_a_and_c() {
        assert!(ModelParams::new(-1.0, 0.0, 1.0, 0.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.0, 0.0, 0.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.0, 1.0, 0.0, 4).is_err());
    }
}
