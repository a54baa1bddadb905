//! Constitutive layer of the coupled system: strain/vorticity split, the
//! traceless projection, the Landau-de Gennes bulk energy and its matrix
//! derivative, the molecular field, the stress tensors, and the nonlinear
//! right-hand sides of the linear/nonlinear splitting.
//!
//! Index conventions (fixed; several identities below depend on them):
//! * tensors are stored component-major with entry `(i, j)` at `i * N + j`;
//! * the velocity gradient is the Jacobian `G_{ij} = d_j u_i`, so
//!   `D = (G + G^T)/2`, `W = (G - G^T)/2`, and `D + W = G` exactly;
//! * `Q : grad u` means `sum_{a,b} Q_{ab} d_a u_b`, a scalar field;
//! * `Div A` is the row divergence, `(Div A)_j = sum_k d_k A_{jk}`.

use crate::grid::{self, GridSpec, PhysicalField, SpectralField};
use crate::params::ModelParams;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("expected {expected} components, got {got}")]
    Components { expected: usize, got: usize },
    #[error("tensor field is not symmetric: max |Q - Q^T| = {0:.3e} relative")]
    NotSymmetric(f64),
    #[error("tensor field is not traceless: max |tr Q| = {0:.3e} relative")]
    NotTraceless(f64),
    #[error("vector field is not divergence free: spectral defect {0:.3e}")]
    NotSolenoidal(f64),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
}

/// Divergence-free velocity field (`N` components per point).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField(pub PhysicalField);

/// Symmetric traceless tensor order parameter (`N^2` components per point).
#[derive(Debug, Clone, PartialEq)]
pub struct QTensorField(pub PhysicalField);

impl VelocityField {
    /// Wrap and validate: component count and spectral divergence.
    pub fn new(field: PhysicalField) -> Result<Self, FieldError> {
        if field.comps != field.grid.dim {
            return Err(FieldError::Components { expected: field.grid.dim, got: field.comps });
        }
        let defect = grid::divergence_defect(&grid::forward(&field));
        if defect > 1e-10 {
            return Err(FieldError::NotSolenoidal(defect));
        }
        Ok(Self(field))
    }

    /// Wrap after projecting onto divergence-free fields.
    pub fn project(field: PhysicalField) -> Result<Self, FieldError> {
        if field.comps != field.grid.dim {
            return Err(FieldError::Components { expected: field.grid.dim, got: field.comps });
        }
        let hat = grid::leray_project(&grid::forward(&field))?;
        Ok(Self(grid::inverse(&hat)))
    }

    pub fn grid(&self) -> GridSpec {
        self.0.grid
    }
}

impl QTensorField {
    /// Wrap and validate symmetry and tracelessness.
    pub fn new(field: PhysicalField) -> Result<Self, FieldError> {
        let dim = field.grid.dim;
        if field.comps != dim * dim {
            return Err(FieldError::Components { expected: dim * dim, got: field.comps });
        }
        let scale = field.max_abs().max(f64::MIN_POSITIVE);
        let (asym, tr) = symmetry_defects(&field);
        if asym > 1e-10 * scale {
            return Err(FieldError::NotSymmetric(asym / scale));
        }
        if tr > 1e-10 * scale {
            return Err(FieldError::NotTraceless(tr / scale));
        }
        Ok(Self(field))
    }

    /// Wrap after symmetrizing and removing the trace pointwise.
    pub fn project(field: PhysicalField) -> Result<Self, FieldError> {
        let dim = field.grid.dim;
        if field.comps != dim * dim {
            return Err(FieldError::Components { expected: dim * dim, got: field.comps });
        }
        let mut f = field;
        symmetrize_traceless_mut(&mut f);
        Ok(Self(f))
    }

    pub fn grid(&self) -> GridSpec {
        self.0.grid
    }
}

/// Max pointwise asymmetry and trace magnitude of a tensor field.
pub fn symmetry_defects(field: &PhysicalField) -> (f64, f64) {
    let dim = field.grid.dim;
    let n = field.grid.n_points();
    let mut asym = 0.0f64;
    let mut tr = 0.0f64;
    for p in 0..n {
        let mut t = 0.0;
        for i in 0..dim {
            t += field.data[(i * dim + i) * n + p];
            for j in (i + 1)..dim {
                asym = asym
                    .max((field.data[(i * dim + j) * n + p] - field.data[(j * dim + i) * n + p]).abs());
            }
        }
        tr = tr.max(t.abs());
    }
    (asym, tr)
}

pub fn symmetrize_traceless_mut(field: &mut PhysicalField) {
    let dim = field.grid.dim;
    let n = field.grid.n_points();
    for p in 0..n {
        let mut tr = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = 0.5 * (field.data[(i * dim + j) * n + p] + field.data[(j * dim + i) * n + p]);
                field.data[(i * dim + j) * n + p] = s;
                field.data[(j * dim + i) * n + p] = s;
            }
            tr += field.data[(i * dim + i) * n + p];
        }
        for i in 0..dim {
            field.data[(i * dim + i) * n + p] -= tr / dim as f64;
        }
    }
}

// -- pointwise tensor helpers -------------------------------------------------

#[inline]
fn gather(field: &PhysicalField, n: usize, comps: usize, p: usize, out: &mut [f64]) {
    for c in 0..comps {
        out[c] = field.data[c * n + p];
    }
}

#[inline]
fn matmul(dim: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..dim {
        for j in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += a[i * dim + k] * b[k * dim + j];
            }
            out[i * dim + j] = s;
        }
    }
}

#[inline]
fn frobenius(dim: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for c in 0..dim * dim {
        s += a[c] * b[c];
    }
    s
}

#[inline]
fn trace(dim: usize, a: &[f64]) -> f64 {
    (0..dim).map(|i| a[i * dim + i]).sum()
}

/// `L[A] = A - tr(A) I / N`, the projection onto traceless matrices.
pub fn traceless_project(field: &PhysicalField) -> PhysicalField {
    let dim = field.grid.dim;
    let n = field.grid.n_points();
    let mut out = field.clone();
    for p in 0..n {
        let mut tr = 0.0;
        for i in 0..dim {
            tr += out.data[(i * dim + i) * n + p];
        }
        for i in 0..dim {
            out.data[(i * dim + i) * n + p] -= tr / dim as f64;
        }
    }
    out
}

// -- spectral derivative stacks ----------------------------------------------

/// Jacobian of a vector field: `G_{ij} = d_j u_i`, stored at `i * N + j`.
pub fn gradient_of_vector(u_hat: &SpectralField) -> PhysicalField {
    let grid = u_hat.grid;
    let dim = grid.dim;
    let mut out = PhysicalField::zeros(grid, dim * dim);
    for i in 0..dim {
        let mut ui = SpectralField::zeros(grid, 1);
        ui.data.copy_from_slice(u_hat.comp(i));
        for j in 0..dim {
            let mut alpha = [0usize; 3];
            alpha[j] = 1;
            let d = grid::inverse(&grid::spectral_derivative(&ui, &alpha[..dim]).unwrap());
            out.comp_mut(i * dim + j).copy_from_slice(&d.data);
        }
    }
    out
}

/// All first derivatives of a tensor field: `d_i Q_{ab}` at `i * N^2 + a * N + b`.
pub fn gradient_of_tensor(q_hat: &SpectralField) -> PhysicalField {
    let grid = q_hat.grid;
    let dim = grid.dim;
    let comps = q_hat.comps;
    let mut out = PhysicalField::zeros(grid, dim * comps);
    for c in 0..comps {
        let mut qc = SpectralField::zeros(grid, 1);
        qc.data.copy_from_slice(q_hat.comp(c));
        for i in 0..dim {
            let mut alpha = [0usize; 3];
            alpha[i] = 1;
            let d = grid::inverse(&grid::spectral_derivative(&qc, &alpha[..dim]).unwrap());
            out.comp_mut(i * comps + c).copy_from_slice(&d.data);
        }
    }
    out
}

/// Row divergence of a tensor field, computed spectrally.
pub fn divergence_of_tensor(a_hat: &SpectralField) -> SpectralField {
    let grid = a_hat.grid;
    let dim = grid.dim;
    let n = grid.n_points();
    let mut out = SpectralField::zeros(grid, dim);
    for p in 0..n {
        let xi = grid.wavevector(p);
        for j in 0..dim {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                s += Complex64::new(0.0, xi[k]) * a_hat.data[(j * dim + k) * n + p];
            }
            out.data[j * n + p] = s;
        }
    }
    out
}

/// Symmetric and antisymmetric parts of the velocity gradient.
pub fn strain_vorticity(u: &VelocityField) -> (PhysicalField, PhysicalField) {
    let grad = gradient_of_vector(&grid::forward(&u.0));
    strain_vorticity_from_grad(&grad)
}

pub fn strain_vorticity_from_grad(grad: &PhysicalField) -> (PhysicalField, PhysicalField) {
    let dim = grad.grid.dim;
    let n = grad.grid.n_points();
    let mut d = PhysicalField::zeros(grad.grid, dim * dim);
    let mut w = PhysicalField::zeros(grad.grid, dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            for p in 0..n {
                let gij = grad.data[(i * dim + j) * n + p];
                let gji = grad.data[(j * dim + i) * n + p];
                d.data[(i * dim + j) * n + p] = 0.5 * (gij + gji);
                w.data[(i * dim + j) * n + p] = 0.5 * (gij - gji);
            }
        }
    }
    (d, w)
}

/// Pointwise bulk energy density `F(Q)` and the total free energy
/// `integral of |grad Q|^2 / 2 + F(Q)`.
pub fn bulk_energy(q: &QTensorField, params: &ModelParams) -> (PhysicalField, f64) {
    let grid = q.grid();
    let dim = grid.dim;
    let n = grid.n_points();
    let mut density = PhysicalField::zeros(grid, 1);
    let mut qq = [0.0f64; 9];
    let mut q2 = [0.0f64; 9];
    let mut q3 = [0.0f64; 9];
    for p in 0..n {
        gather(&q.0, n, dim * dim, p, &mut qq[..dim * dim]);
        matmul(dim, &qq[..dim * dim], &qq[..dim * dim], &mut q2[..dim * dim]);
        matmul(dim, &q2[..dim * dim], &qq[..dim * dim], &mut q3[..dim * dim]);
        let tr2 = trace(dim, &q2[..dim * dim]);
        let tr3 = trace(dim, &q3[..dim * dim]);
        density.data[p] =
            0.5 * params.a * tr2 - params.b_coef / 3.0 * tr3 + 0.25 * params.c_coef * tr2 * tr2;
    }
    // Elastic part |grad Q|^2 / 2 from the spectral gradient stack.
    let gq = gradient_of_tensor(&grid::forward(&q.0));
    let dv = grid.cell_volume();
    let mut total = 0.0;
    for p in 0..n {
        let mut g2 = 0.0;
        for c in 0..gq.comps {
            let v = gq.data[c * n + p];
            g2 += v * v;
        }
        total += (0.5 * params.elastic_l * g2 + density.data[p]) * dv;
    }
    (density, total)
}

/// Matrix derivative of the bulk energy before the traceless projection:
/// `dF(Q) = a Q - b Q^2 + c tr(Q^2) Q`.
pub fn bulk_derivative(q: &PhysicalField, params: &ModelParams) -> PhysicalField {
    let dim = q.grid.dim;
    let n = q.grid.n_points();
    let mut out = PhysicalField::zeros(q.grid, dim * dim);
    let mut qq = [0.0f64; 9];
    let mut q2 = [0.0f64; 9];
    for p in 0..n {
        gather(q, n, dim * dim, p, &mut qq[..dim * dim]);
        matmul(dim, &qq[..dim * dim], &qq[..dim * dim], &mut q2[..dim * dim]);
        let tr2 = trace(dim, &q2[..dim * dim]);
        for c in 0..dim * dim {
            out.data[c * n + p] = params.a * qq[c] - params.b_coef * q2[c] + params.c_coef * tr2 * qq[c];
        }
    }
    out
}

/// Molecular field `H = Lap Q - L[dF(Q)]`.
pub fn molecular_field(q: &QTensorField, params: &ModelParams) -> PhysicalField {
    let lap = grid::inverse(&grid::spectral_laplacian(&grid::forward(&q.0)));
    let df = traceless_project(&bulk_derivative(&q.0, params));
    let mut out = lap;
    for (o, d) in out.data.iter_mut().zip(df.data.iter()) {
        *o -= d;
    }
    out
}

/// Co-rotation/stretching tensor
/// `S = (xi D + W)(Q + I/N) + (Q + I/N)(xi D - W) - 2 xi (Q + I/N)(Q : grad u)`.
pub fn tensor_s(u: &VelocityField, q: &QTensorField, params: &ModelParams) -> PhysicalField {
    let grad = gradient_of_vector(&grid::forward(&u.0));
    tensor_s_from_parts(&grad, &q.0, params)
}

pub fn tensor_s_from_parts(grad: &PhysicalField, q: &PhysicalField, params: &ModelParams) -> PhysicalField {
    let grid = grad.grid;
    let dim = grid.dim;
    let n = grid.n_points();
    let xi_a = params.xi_a;
    let inv_n = 1.0 / dim as f64;
    let mut out = PhysicalField::zeros(grid, dim * dim);
    let (mut g, mut qq, mut qn, mut a, mut b, mut t1, mut t2) =
        ([0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9]);
    for p in 0..n {
        gather(grad, n, dim * dim, p, &mut g[..dim * dim]);
        gather(q, n, dim * dim, p, &mut qq[..dim * dim]);
        qn[..dim * dim].copy_from_slice(&qq[..dim * dim]);
        for i in 0..dim {
            qn[i * dim + i] += inv_n;
        }
        for i in 0..dim {
            for j in 0..dim {
                let dij = 0.5 * (g[i * dim + j] + g[j * dim + i]);
                let wij = 0.5 * (g[i * dim + j] - g[j * dim + i]);
                a[i * dim + j] = xi_a * dij + wij;
                b[i * dim + j] = xi_a * dij - wij;
            }
        }
        // Q : grad u = sum_{a,b} Q_{ab} d_a u_b = sum Q_{ab} G_{ba}.
        let mut qgu = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                qgu += qq[i * dim + j] * g[j * dim + i];
            }
        }
        matmul(dim, &a[..dim * dim], &qn[..dim * dim], &mut t1[..dim * dim]);
        matmul(dim, &qn[..dim * dim], &b[..dim * dim], &mut t2[..dim * dim]);
        for c in 0..dim * dim {
            out.data[c * n + p] = t1[c] + t2[c] - 2.0 * xi_a * qn[c] * qgu;
        }
    }
    out
}

/// Elastic stress `grad Q (.) grad Q`, `(i,j) -> sum_{a,b} d_i Q_{ab} d_j Q_{ab}`.
pub fn grad_q_odot(gradq: &PhysicalField, dim: usize) -> PhysicalField {
    let grid = gradq.grid;
    let n = grid.n_points();
    let comps = dim * dim;
    let mut out = PhysicalField::zeros(grid, comps);
    for i in 0..dim {
        for j in 0..dim {
            let o = i * dim + j;
            for c in 0..comps {
                for p in 0..n {
                    out.data[o * n + p] +=
                        gradq.data[(i * comps + c) * n + p] * gradq.data[(j * comps + c) * n + p];
                }
            }
        }
    }
    out
}

/// Distortion stress
/// `tau = 2 xi (H : Q)(Q + I/N) - xi [H (Q + I/N) + (Q + I/N) H] - grad Q (.) grad Q`.
pub fn stress_tau(q: &QTensorField, h: &PhysicalField, params: &ModelParams) -> PhysicalField {
    let gradq = gradient_of_tensor(&grid::forward(&q.0));
    let odot = grad_q_odot(&gradq, q.grid().dim);
    let grid = q.grid();
    let dim = grid.dim;
    let n = grid.n_points();
    let xi_a = params.xi_a;
    let inv_n = 1.0 / dim as f64;
    let mut out = PhysicalField::zeros(grid, dim * dim);
    let (mut qq, mut hh, mut qn, mut t1, mut t2) =
        ([0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9]);
    for p in 0..n {
        gather(&q.0, n, dim * dim, p, &mut qq[..dim * dim]);
        gather(h, n, dim * dim, p, &mut hh[..dim * dim]);
        qn[..dim * dim].copy_from_slice(&qq[..dim * dim]);
        for i in 0..dim {
            qn[i * dim + i] += inv_n;
        }
        let hq = frobenius(dim, &hh[..dim * dim], &qq[..dim * dim]);
        matmul(dim, &hh[..dim * dim], &qn[..dim * dim], &mut t1[..dim * dim]);
        matmul(dim, &qn[..dim * dim], &hh[..dim * dim], &mut t2[..dim * dim]);
        for c in 0..dim * dim {
            out.data[c * n + p] = 2.0 * xi_a * hq * qn[c] - xi_a * (t1[c] + t2[c]) - odot.data[c * n + p];
        }
    }
    out
}

/// Commutator stress `sigma = Q H - H Q`, antisymmetric pointwise.
pub fn stress_sigma(q: &PhysicalField, h: &PhysicalField) -> PhysicalField {
    let dim = q.grid.dim;
    let n = q.grid.n_points();
    let mut out = PhysicalField::zeros(q.grid, dim * dim);
    let (mut qq, mut hh, mut t1, mut t2) = ([0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9]);
    for p in 0..n {
        gather(q, n, dim * dim, p, &mut qq[..dim * dim]);
        gather(h, n, dim * dim, p, &mut hh[..dim * dim]);
        matmul(dim, &qq[..dim * dim], &hh[..dim * dim], &mut t1[..dim * dim]);
        matmul(dim, &hh[..dim * dim], &qq[..dim * dim], &mut t2[..dim * dim]);
        for c in 0..dim * dim {
            out.data[c * n + p] = t1[c] - t2[c];
        }
    }
    out
}

/// Bulk contribution to `g`.  The energy-consistent default is
/// `L[b Q^2 - c tr(Q^2) Q]`, which makes the linear/nonlinear split an exact
/// rearrangement of the unsplit system; the literal variant flips the sign of
/// the quadratic term.
pub fn bulk_g_term(q: &PhysicalField, params: &ModelParams) -> PhysicalField {
    let dim = q.grid.dim;
    let n = q.grid.n_points();
    let mut out = PhysicalField::zeros(q.grid, dim * dim);
    let (mut qq, mut q2) = ([0.0f64; 9], [0.0f64; 9]);
    let bsign = if params.paper_literal_fprime { -1.0 } else { 1.0 };
    for p in 0..n {
        gather(q, n, dim * dim, p, &mut qq[..dim * dim]);
        matmul(dim, &qq[..dim * dim], &qq[..dim * dim], &mut q2[..dim * dim]);
        let tr2 = trace(dim, &q2[..dim * dim]);
        for c in 0..dim * dim {
            out.data[c * n + p] = bsign * params.b_coef * q2[c] - params.c_coef * tr2 * qq[c];
        }
    }
    traceless_project(&out)
}

/// Everything the nonlinear right-hand sides need, computed once.
struct Kitchen {
    u: PhysicalField,
    q: PhysicalField,
    grad_u: PhysicalField,
    grad_q: PhysicalField,
    h: PhysicalField,
}

fn prepare(u_hat: &SpectralField, q_hat: &SpectralField, params: &ModelParams, dealias: bool) -> Kitchen {
    let (u_hat, q_hat) = if dealias {
        (grid::dealias(u_hat), grid::dealias(q_hat))
    } else {
        (u_hat.clone(), q_hat.clone())
    };
    let u = grid::inverse(&u_hat);
    let q = grid::inverse(&q_hat);
    let grad_u = gradient_of_vector(&u_hat);
    let grad_q = gradient_of_tensor(&q_hat);
    let lap_q = grid::inverse(&grid::spectral_laplacian(&q_hat));
    let df = traceless_project(&bulk_derivative(&q, params));
    let mut h = lap_q;
    for (o, d) in h.data.iter_mut().zip(df.data.iter()) {
        *o -= d;
    }
    Kitchen { u, q, grad_u, grad_q, h }
}

/// Spectral nonlinear right-hand sides `(f_hat, g_hat)` of the split system.
///
/// `f = -u.grad u + Div[ 2 xi (H:Q)(Q + I/N) - (xi+1) H Q + (1-xi) Q H
///      - grad Q (.) grad Q + beta L[dF(Q)] ]`
/// `g = -(u.grad) Q + xi (D Q + Q D) + W Q - Q W - 2 xi (Q + I/N)(Q : grad u)
///      + bulk_g_term(Q)`
///
/// The `beta L[dF(Q)]` piece carries the part of the stress linearization
/// that the extracted `beta Div Lap Q` term does not; dropping it (the
/// literal-text variant) breaks the exact split identity.
pub fn nonlinear_rhs_spectral(
    u_hat: &SpectralField,
    q_hat: &SpectralField,
    params: &ModelParams,
    dealias: bool,
) -> (SpectralField, SpectralField) {
    let k = prepare(u_hat, q_hat, params, dealias);
    let grid_spec = k.u.grid;
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();
    let comps = dim * dim;
    let xi_a = params.xi_a;
    let inv_n = 1.0 / dim as f64;

    let odot = grad_q_odot(&k.grad_q, dim);
    let df = if params.paper_literal_fprime {
        None
    } else {
        Some(traceless_project(&bulk_derivative(&k.q, params)))
    };

    let mut advect_u = PhysicalField::zeros(grid_spec, dim);
    let mut bracket = PhysicalField::zeros(grid_spec, comps);
    let mut g_field = PhysicalField::zeros(grid_spec, comps);
    let (mut qq, mut hh, mut qn, mut gu, mut t1, mut t2, mut dm, mut wm) = (
        [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9], [0.0f64; 9],
        [0.0f64; 9],
    );
    for p in 0..n {
        gather(&k.q, n, comps, p, &mut qq[..comps]);
        gather(&k.h, n, comps, p, &mut hh[..comps]);
        gather(&k.grad_u, n, comps, p, &mut gu[..comps]);
        qn[..comps].copy_from_slice(&qq[..comps]);
        for i in 0..dim {
            qn[i * dim + i] += inv_n;
        }
        // (u . grad u)_j = sum_i u_i d_i u_j = sum_i u_i G_{ji}.
        for j in 0..dim {
            let mut s = 0.0;
            for i in 0..dim {
                s += k.u.data[i * n + p] * gu[j * dim + i];
            }
            advect_u.data[j * n + p] = s;
        }
        let hq = frobenius(dim, &hh[..comps], &qq[..comps]);
        matmul(dim, &hh[..comps], &qq[..comps], &mut t1[..comps]); // H Q
        matmul(dim, &qq[..comps], &hh[..comps], &mut t2[..comps]); // Q H
        for c in 0..comps {
            let mut v = 2.0 * xi_a * hq * qn[c] - (xi_a + 1.0) * t1[c] + (1.0 - xi_a) * t2[c]
                - odot.data[c * n + p];
            if let Some(df) = &df {
                v += params.beta * df.data[c * n + p];
            }
            bracket.data[c * n + p] = v;
        }

        // g flow terms: xi (D Q + Q D) + W Q - Q W - 2 xi (Q + I/N)(Q : grad u).
        let mut qgu = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                qgu += qq[i * dim + j] * gu[j * dim + i];
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                dm[i * dim + j] = 0.5 * (gu[i * dim + j] + gu[j * dim + i]);
                wm[i * dim + j] = 0.5 * (gu[i * dim + j] - gu[j * dim + i]);
            }
        }
        matmul(dim, &dm[..comps], &qq[..comps], &mut t1[..comps]); // D Q
        matmul(dim, &qq[..comps], &dm[..comps], &mut t2[..comps]); // Q D
        for c in 0..comps {
            g_field.data[c * n + p] = xi_a * (t1[c] + t2[c]) - 2.0 * xi_a * qn[c] * qgu;
        }
        matmul(dim, &wm[..comps], &qq[..comps], &mut t1[..comps]); // W Q
        matmul(dim, &qq[..comps], &wm[..comps], &mut t2[..comps]); // Q W
        for c in 0..comps {
            g_field.data[c * n + p] += t1[c] - t2[c];
        }
        for c in 0..comps {
            let mut s = 0.0;
            for i in 0..dim {
                s += k.u.data[i * n + p] * k.grad_q.data[(i * comps + c) * n + p];
            }
            g_field.data[c * n + p] -= s;
        }
    }

    let bulk = bulk_g_term(&k.q, params);
    for (g, b) in g_field.data.iter_mut().zip(bulk.data.iter()) {
        *g += b;
    }

    let mut f_hat = divergence_of_tensor(&grid::forward(&bracket));
    let adv_hat = grid::forward(&advect_u);
    for (f, a) in f_hat.data.iter_mut().zip(adv_hat.data.iter()) {
        *f -= a;
    }
    let mut g_hat = grid::forward(&g_field);
    if dealias {
        grid::dealias_mut(&mut f_hat);
        grid::dealias_mut(&mut g_hat);
    }
    (f_hat, g_hat)
}

/// Physical-space nonlinear momentum forcing `f(u, Q)`.
pub fn nonlinear_f(u: &VelocityField, q: &QTensorField, params: &ModelParams, dealias: bool) -> PhysicalField {
    let (f_hat, _) = nonlinear_rhs_spectral(&grid::forward(&u.0), &grid::forward(&q.0), params, dealias);
    grid::inverse(&f_hat)
}

/// Physical-space nonlinear tensor forcing `g(u, Q)`.
pub fn nonlinear_g(u: &VelocityField, q: &QTensorField, params: &ModelParams, dealias: bool) -> PhysicalField {
    let (_, g_hat) = nonlinear_rhs_spectral(&grid::forward(&u.0), &grid::forward(&q.0), params, dealias);
    grid::inverse(&g_hat)
}

/// Linear part of the split system applied to `(u, Q)`:
/// momentum `P[Lap u - beta Div Lap Q]`, tensor `beta D(u) + Lap Q - a L[Q]`.
pub fn linear_rhs_spectral(
    u_hat: &SpectralField,
    q_hat: &SpectralField,
    params: &ModelParams,
) -> (SpectralField, SpectralField) {
    let grid_spec = u_hat.grid;
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();
    let mut mom = grid::spectral_laplacian(u_hat);
    let divlap = divergence_of_tensor(&grid::spectral_laplacian(q_hat));
    for (m, d) in mom.data.iter_mut().zip(divlap.data.iter()) {
        *m -= params.beta * d;
    }
    grid::leray_project_mut(&mut mom);

    let mut qrhs = grid::spectral_laplacian(q_hat);
    for p in 0..n {
        let xi = grid_spec.wavevector(p);
        let mut tr = Complex64::new(0.0, 0.0);
        for i in 0..dim {
            tr += q_hat.data[(i * dim + i) * n + p];
        }
        for i in 0..dim {
            for j in 0..dim {
                let c = i * dim + j;
                let d_uij = Complex64::new(0.0, 0.5)
                    * (xi[j] * u_hat.data[i * n + p] + xi[i] * u_hat.data[j * n + p]);
                let mut v = qrhs.data[c * n + p] + params.beta * d_uij - params.a * q_hat.data[c * n + p];
                if i == j {
                    v += params.a * tr / dim as f64;
                }
                qrhs.data[c * n + p] = v;
            }
        }
    }
    (mom, qrhs)
}

/// Unsplit right-hand sides of the original system, the oracle against which
/// the linear + (f, g) decomposition is verified:
/// momentum `P[Lap u - u.grad u + Div(tau + sigma)]`,
/// tensor `-(u.grad) Q + S(grad u, Q) + H`.
pub fn assemble_full_rhs(
    u: &VelocityField,
    q: &QTensorField,
    params: &ModelParams,
) -> (PhysicalField, PhysicalField) {
    let grid_spec = u.grid();
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();
    let u_hat = grid::forward(&u.0);
    let q_hat = grid::forward(&q.0);
    let grad_u = gradient_of_vector(&u_hat);
    let h = molecular_field(q, params);
    let tau = stress_tau(q, &h, params);
    let sigma = stress_sigma(&q.0, &h);

    let mut stress = tau;
    for (s, x) in stress.data.iter_mut().zip(sigma.data.iter()) {
        *s += x;
    }
    let mut mom_hat = grid::spectral_laplacian(&u_hat);
    let div_stress = divergence_of_tensor(&grid::forward(&stress));
    for (m, d) in mom_hat.data.iter_mut().zip(div_stress.data.iter()) {
        *m += d;
    }
    let mut advect = PhysicalField::zeros(grid_spec, dim);
    for p in 0..n {
        for j in 0..dim {
            let mut s = 0.0;
            for i in 0..dim {
                s += u.0.data[i * n + p] * grad_u.data[(j * dim + i) * n + p];
            }
            advect.data[j * n + p] = s;
        }
    }
    let adv_hat = grid::forward(&advect);
    for (m, a) in mom_hat.data.iter_mut().zip(adv_hat.data.iter()) {
        *m -= a;
    }
    grid::leray_project_mut(&mut mom_hat);
    let momentum = grid::inverse(&mom_hat);

    let s_tensor = tensor_s_from_parts(&grad_u, &q.0, params);
    let grad_q = gradient_of_tensor(&q_hat);
    let comps = dim * dim;
    let mut q_rhs = h;
    for p in 0..n {
        for c in 0..comps {
            let mut adv = 0.0;
            for i in 0..dim {
                adv += u.0.data[i * n + p] * grad_q.data[(i * comps + c) * n + p];
            }
            q_rhs.data[c * n + p] += s_tensor.data[c * n + p] - adv;
        }
    }
    (momentum, q_rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid_spec(dim: usize, m: usize) -> GridSpec {
        GridSpec::new(dim, m, 2.0 * PI).unwrap()
    }

    use crate::testutil::{random_state, smooth_field};

    #[test]
    fn shear_flow_strain_and_vorticity() {
        let g = grid_spec(3, 16);
        let n = g.n_points();
        let mut data = vec![0.0; 3 * n];
        let k = 2.0 * PI / g.box_length;
        for p in 0..n {
            let x = g.coords(p);
            data[p] = (k * x[1]).sin(); // u = (sin(2 pi x2 / L), 0, 0)
        }
        let u = VelocityField::new(PhysicalField::from_data(g, 3, data).unwrap()).unwrap();
        let (d, w) = strain_vorticity(&u);
        for p in 0..n {
            let x = g.coords(p);
            let expect = PI / g.box_length * (k * x[1]).cos();
            assert!((d.data[(0 * 3 + 1) * n + p] - expect).abs() < 1e-10);
            assert!((d.data[(1 * 3 + 0) * n + p] - expect).abs() < 1e-10);
            assert!((w.data[(0 * 3 + 1) * n + p] - expect).abs() < 1e-10);
            assert!((w.data[(1 * 3 + 0) * n + p] + expect).abs() < 1e-10);
            for (i, j) in [(0, 0), (1, 1), (2, 2), (0, 2), (2, 0), (1, 2), (2, 1)] {
                assert!(d.data[(i * 3 + j) * n + p].abs() < 1e-10);
                assert!(w.data[(i * 3 + j) * n + p].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn strain_vorticity_symmetry_and_sum() {
        let g = grid_spec(2, 16);
        let (u, _) = random_state(g, 5, 0.7);
        let grad = gradient_of_vector(&grid::forward(&u.0));
        let (d, w) = strain_vorticity_from_grad(&grad);
        let n = g.n_points();
        for p in 0..n {
            for i in 0..2 {
                for j in 0..2 {
                    let dd = d.data[(i * 2 + j) * n + p];
                    let dt = d.data[(j * 2 + i) * n + p];
                    let ww = w.data[(i * 2 + j) * n + p];
                    let wt = w.data[(j * 2 + i) * n + p];
                    assert!((dd - dt).abs() < 1e-12);
                    assert!((ww + wt).abs() < 1e-12);
                    let gg = grad.data[(i * 2 + j) * n + p];
                    assert!((dd + ww - gg).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn traceless_projection_properties() {
        let g = grid_spec(3, 8);
        let n = g.n_points();
        let mut eye = PhysicalField::zeros(g, 9);
        for i in 0..3 {
            for p in 0..n {
                eye.data[(i * 3 + i) * n + p] = 1.0;
            }
        }
        assert!(traceless_project(&eye).max_abs() < 1e-15);
        let a = smooth_field(g, 9, 2, 9, 1.0);
        let la = traceless_project(&a);
        let lla = traceless_project(&la);
        let (_, tr) = symmetry_defects(&la);
        assert!(tr < 1e-14 * a.max_abs());
        let diff =
            la.data.iter().zip(lla.data.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff < 1e-15);
    }

    #[test]
    fn bulk_energy_of_constant_diagonal() {
        let g = grid_spec(3, 8);
        let n = g.n_points();
        let qv = 0.3;
        let mut data = vec![0.0; 9 * n];
        for p in 0..n {
            data[p] = qv; // Q_00
            data[4 * n + p] = -qv; // Q_11
        }
        let q = QTensorField::new(PhysicalField::from_data(g, 9, data).unwrap()).unwrap();
        let params = ModelParams::new(1.0, 0.0, 1.0, 0.0, 3).unwrap();
        let (density, total) = bulk_energy(&q, &params);
        let expect = qv * qv + qv.powi(4); // tr Q^2 = 2 q^2
        for p in 0..n {
            assert!((density.data[p] - expect).abs() < 1e-14);
        }
        let vol = g.box_length.powi(3);
        assert!((total - expect * vol).abs() < 1e-10 * expect * vol);
        let q0 = QTensorField::new(PhysicalField::zeros(g, 9)).unwrap();
        let (d0, t0) = bulk_energy(&q0, &params);
        assert_eq!(d0.max_abs(), 0.0);
        assert_eq!(t0, 0.0);
    }

    #[test]
    fn bulk_energy_nonnegative_without_cubic_term() {
        let g = grid_spec(2, 8);
        let params = ModelParams::new(0.7, 0.0, 1.3, 0.0, 2).unwrap();
        let q = QTensorField::project(smooth_field(g, 4, 2, 17, 1.5)).unwrap();
        let (density, _) = bulk_energy(&q, &params);
        assert!(density.data.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn bulk_derivative_closed_form_when_b_zero() {
        let g = grid_spec(2, 8);
        let params = ModelParams::new(1.0, 0.0, 1.0, 0.0, 2).unwrap();
        let q = QTensorField::project(smooth_field(g, 4, 2, 3, 0.4)).unwrap();
        let df = bulk_derivative(&q.0, &params);
        let n = g.n_points();
        for p in 0..n {
            let mut tr2 = 0.0;
            for c in 0..4 {
                let v = q.0.data[c * n + p];
                tr2 += v * v;
            }
            for c in 0..4 {
                let expect = (1.0 + tr2) * q.0.data[c * n + p];
                assert!((df.data[c * n + p] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bulk_derivative_matches_finite_differences_of_energy() {
        let g = grid_spec(2, 16);
        let params = ModelParams::new(1.0, 0.6, 1.2, 0.0, 2).unwrap();
        for trial in 0..5u64 {
            let q = QTensorField::project(smooth_field(g, 4, 3, 100 + trial, 0.3)).unwrap();
            let v = QTensorField::project(smooth_field(g, 4, 3, 200 + trial, 1.0)).unwrap();
            let eps = 1e-5;
            let bulk_integral = |s: f64| {
                let mut d = q.0.clone();
                for (x, y) in d.data.iter_mut().zip(v.0.data.iter()) {
                    *x += s * y;
                }
                let qq = QTensorField::new(d).unwrap();
                let (density, _) = bulk_energy(&qq, &params);
                density.data.iter().sum::<f64>() * g.cell_volume()
            };
            let fd = (bulk_integral(eps) - bulk_integral(-eps)) / (2.0 * eps);
            let df = traceless_project(&bulk_derivative(&q.0, &params));
            let n = g.n_points();
            let mut inner = 0.0;
            for c in 0..4 {
                for p in 0..n {
                    inner += df.data[c * n + p] * v.0.data[c * n + p];
                }
            }
            inner *= g.cell_volume();
            assert!(
                (fd - inner).abs() < 1e-6 * inner.abs().max(1e-12),
                "trial {trial}: fd {fd} vs inner {inner}"
            );
        }
    }

    #[test]
    fn molecular_field_is_traceless_and_symmetric() {
        let g = grid_spec(3, 8);
        let params = ModelParams::new(1.0, 0.4, 1.0, 0.3, 3).unwrap();
        let q = QTensorField::project(smooth_field(g, 9, 2, 31, 0.5)).unwrap();
        let h = molecular_field(&q, &params);
        let (asym, tr) = symmetry_defects(&h);
        let scale = h.max_abs();
        assert!(tr < 1e-10 * scale, "trace defect {tr}");
        assert!(asym < 1e-10 * scale);
        // Constant Q: H = -L[dF(Q)].
        let n = g.n_points();
        let mut data = vec![0.0; 9 * n];
        for p in 0..n {
            data[p] = 0.2;
            data[4 * n + p] = -0.2;
        }
        let qc = QTensorField::new(PhysicalField::from_data(g, 9, data).unwrap()).unwrap();
        let hc = molecular_field(&qc, &params);
        let df = traceless_project(&bulk_derivative(&qc.0, &params));
        for (a, b) in hc.data.iter().zip(df.data.iter()) {
            assert!((a + b).abs() < 1e-9);
        }
        // Zero input maps to zero.
        let qz = QTensorField::new(PhysicalField::zeros(g, 9)).unwrap();
        assert!(molecular_field(&qz, &params).max_abs() < 1e-15);
    }

    #[test]
    fn tensor_s_reduces_to_beta_d_at_zero_q() {
        let g = grid_spec(2, 16);
        let params = ModelParams::new(1.0, 0.0, 1.0, 0.8, 2).unwrap();
        let (u, _) = random_state(g, 77, 0.9);
        let q0 = QTensorField::new(PhysicalField::zeros(g, 4)).unwrap();
        let s = tensor_s(&u, &q0, &params);
        let (d, _) = strain_vorticity(&u);
        let n = g.n_points();
        for c in 0..4 {
            for p in 0..n {
                assert!((s.data[c * n + p] - params.beta * d.data[c * n + p]).abs() < 1e-11);
            }
        }
        let uz = VelocityField::new(PhysicalField::zeros(g, 2)).unwrap();
        let (_, q) = random_state(g, 78, 0.5);
        assert!(tensor_s(&uz, &q, &params).max_abs() < 1e-14);
    }

    #[test]
    fn tensor_s_remainder_scaling_in_q() {
        // R(u, Q) = S - beta D splits into linear + quadratic parts in Q;
        // R(u, 2Q) - 2 R(u, Q) isolates twice the quadratic part.
        let g = grid_spec(2, 16);
        let params = ModelParams::new(1.0, 0.0, 1.0, 0.6, 2).unwrap();
        let (u, q) = random_state(g, 55, 0.8);
        let grad = gradient_of_vector(&grid::forward(&u.0));
        let (d, _) = strain_vorticity_from_grad(&grad);
        let n = g.n_points();
        let remainder = |qf: &PhysicalField| {
            let mut s = tensor_s_from_parts(&grad, qf, &params);
            for (sv, dv) in s.data.iter_mut().zip(d.data.iter()) {
                *sv -= params.beta * dv;
            }
            s
        };
        let mut q2 = q.0.clone();
        for v in q2.data.iter_mut() {
            *v *= 2.0;
        }
        let r1 = remainder(&q.0);
        let r2 = remainder(&q2);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for p in 0..n {
            let mut qgu = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    qgu += q.0.data[(i * 2 + j) * n + p] * grad.data[(j * 2 + i) * n + p];
                }
            }
            for c in 0..4 {
                let quad = -2.0 * params.xi_a * q.0.data[c * n + p] * qgu;
                let got = r2.data[c * n + p] - 2.0 * r1.data[c * n + p];
                worst = worst.max((got - 2.0 * quad).abs());
                scale = scale.max(got.abs());
            }
        }
        assert!(worst < 1e-10 * scale.max(1e-12), "worst {worst} scale {scale}");
    }

    #[test]
    fn grad_q_odot_single_entry_and_psd() {
        let g = grid_spec(2, 32);
        let n = g.n_points();
        let k = 2.0 * PI / g.box_length;
        let mut data = vec![0.0; 4 * n];
        for p in 0..n {
            let x = g.coords(p);
            data[p] = (k * x[0]).sin(); // Q_00 = sin(2 pi x1 / L)
        }
        let q = PhysicalField::from_data(g, 4, data).unwrap();
        let od = grad_q_odot(&gradient_of_tensor(&grid::forward(&q)), 2);
        for p in 0..n {
            let x = g.coords(p);
            let expect = (k * (k * x[0]).cos()).powi(2);
            assert!((od.data[p] - expect).abs() < 1e-9);
            assert!(od.data[n + p].abs() < 1e-9);
            assert!(od.data[2 * n + p].abs() < 1e-9);
            assert!(od.data[3 * n + p].abs() < 1e-9);
        }
        let qr = smooth_field(g, 4, 4, 12, 1.0);
        let odr = grad_q_odot(&gradient_of_tensor(&grid::forward(&qr)), 2);
        for p in 0..n {
            let a = odr.data[p];
            let b = odr.data[n + p];
            let c = odr.data[2 * n + p];
            let dd = odr.data[3 * n + p];
            assert!((b - c).abs() < 1e-12 * odr.max_abs());
            assert!(a >= -1e-13 && dd >= -1e-13);
            assert!(a * dd - b * c >= -1e-10 * odr.max_abs().powi(2));
        }
    }

    #[test]
    fn sigma_is_antisymmetric_and_vanishes_when_commuting() {
        let g = grid_spec(3, 8);
        let mut qs = smooth_field(g, 9, 2, 40, 1.0);
        symmetrize_traceless_mut(&mut qs);
        let z = stress_sigma(&qs, &qs);
        assert!(z.max_abs() < 1e-12);
        let mut h = smooth_field(g, 9, 2, 41, 1.0);
        symmetrize_traceless_mut(&mut h);
        let s = stress_sigma(&qs, &h);
        let n = g.n_points();
        for p in 0..n {
            for i in 0..3 {
                for j in 0..3 {
                    let a = s.data[(i * 3 + j) * n + p];
                    let b = s.data[(j * 3 + i) * n + p];
                    assert!((a + b).abs() < 1e-13 * s.max_abs().max(1.0));
                }
            }
        }
        // Diagonal Q and H commute.
        let nq = g.n_points();
        let mut dq = vec![0.0; 9 * nq];
        let mut dh = vec![0.0; 9 * nq];
        for p in 0..nq {
            dq[p] = 0.4;
            dq[4 * nq + p] = -0.4;
            dh[p] = -0.1;
            dh[8 * nq + p] = 0.1;
        }
        let z2 = stress_sigma(
            &PhysicalField::from_data(g, 9, dq).unwrap(),
            &PhysicalField::from_data(g, 9, dh).unwrap(),
        );
        assert!(z2.max_abs() < 1e-15);
    }

    #[test]
    fn nonlinear_terms_vanish_on_zero_state() {
        let g = grid_spec(2, 8);
        let params = ModelParams::new(1.0, 0.5, 1.0, 0.7, 2).unwrap();
        let u = VelocityField::new(PhysicalField::zeros(g, 2)).unwrap();
        let q = QTensorField::new(PhysicalField::zeros(g, 4)).unwrap();
        assert!(nonlinear_f(&u, &q, &params, false).max_abs() < 1e-14);
        assert!(nonlinear_g(&u, &q, &params, false).max_abs() < 1e-14);
        let (mom, qr) = assemble_full_rhs(&u, &q, &params);
        assert!(mom.max_abs() < 1e-14);
        assert!(qr.max_abs() < 1e-14);
    }

    #[test]
    fn f_reduces_to_advection_at_zero_q() {
        let g = grid_spec(2, 16);
        let params = ModelParams::new(1.0, 0.5, 1.0, 0.7, 2).unwrap();
        let (u, _) = random_state(g, 21, 0.8);
        let q = QTensorField::new(PhysicalField::zeros(g, 4)).unwrap();
        let f = nonlinear_f(&u, &q, &params, false);
        let grad = gradient_of_vector(&grid::forward(&u.0));
        let n = g.n_points();
        for p in 0..n {
            for j in 0..2 {
                let mut adv = 0.0;
                for i in 0..2 {
                    adv += u.0.data[i * n + p] * grad.data[(j * 2 + i) * n + p];
                }
                assert!((f.data[j * n + p] + adv).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn g_reduces_to_bulk_term_at_zero_velocity() {
        let g = grid_spec(2, 16);
        let params = ModelParams::new(1.0, 0.5, 1.0, 0.7, 2).unwrap();
        let u = VelocityField::new(PhysicalField::zeros(g, 2)).unwrap();
        let (_, q) = random_state(g, 22, 0.5);
        let gv = nonlinear_g(&u, &q, &params, false);
        let bulk = bulk_g_term(&q.0, &params);
        let diff =
            gv.data.iter().zip(bulk.data.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-11 * bulk.max_abs().max(1e-12));
    }

    #[test]
    fn split_identity_matches_full_assembly() {
        for (dim, m) in [(2usize, 16usize), (3, 8)] {
            let g = grid_spec(dim, m);
            for (t, xi_a) in [0.0, 0.3, 1.0].into_iter().enumerate() {
                let params = ModelParams::new(1.0, 0.5, 1.0, xi_a, dim).unwrap();
                let (u, q) = random_state(g, 300 + t as u64 + dim as u64 * 10, 0.6);
                let u_hat = grid::forward(&u.0);
                let q_hat = grid::forward(&q.0);
                let (lin_u, lin_q) = linear_rhs_spectral(&u_hat, &q_hat, &params);
                let (f_hat, g_hat) = nonlinear_rhs_spectral(&u_hat, &q_hat, &params, false);
                let mut split_u = grid::leray_project(&f_hat).unwrap();
                for (s, l) in split_u.data.iter_mut().zip(lin_u.data.iter()) {
                    *s += l;
                }
                let mut split_q = g_hat;
                for (s, l) in split_q.data.iter_mut().zip(lin_q.data.iter()) {
                    *s += l;
                }
                let (full_u, full_q) = assemble_full_rhs(&u, &q, &params);
                let su = grid::inverse(&split_u);
                let sq = grid::inverse(&split_q);
                let du = su
                    .data
                    .iter()
                    .zip(full_u.data.iter())
                    .fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
                let dq = sq
                    .data
                    .iter()
                    .zip(full_q.data.iter())
                    .fold(0.0f64, |mx, (a, b)| mx.max((a - b).abs()));
                assert!(du < 1e-10, "dim {dim} xi_a {xi_a}: momentum split defect {du}");
                assert!(dq < 1e-10, "dim {dim} xi_a {xi_a}: tensor split defect {dq}");
            }
        }
    }

    #[test]
    fn literal_fprime_variant_flips_bulk_sign_and_breaks_the_split() {
        let g = grid_spec(2, 16);
        let mut params = ModelParams::new(1.0, 0.7, 1.0, 0.5, 2).unwrap();
        let (u, q) = random_state(g, 900, 0.5);
        // Bulk term of g: literal text flips the sign of the quadratic part.
        let consistent = bulk_g_term(&q.0, &params);
        params.paper_literal_fprime = true;
        let literal = bulk_g_term(&q.0, &params);
        let n = g.n_points();
        let mut qq = q.0.clone();
        let mut worst = 0.0f64;
        symmetrize_traceless_mut(&mut qq);
        for p in 0..n {
            let mut q2 = [0.0f64; 4];
            let mut qv = [0.0f64; 4];
            for c in 0..4 {
                qv[c] = qq.data[c * n + p];
            }
            matmul(2, &qv, &qv, &mut q2);
            let tr = q2[0] + q2[3];
            let _ = tr;
            // literal - consistent = -2 b L[Q^2] pointwise.
            let mut lq2 = q2;
            let t = (q2[0] + q2[3]) / 2.0;
            lq2[0] -= t;
            lq2[3] -= t;
            for c in 0..4 {
                let got = literal.data[c * n + p] - consistent.data[c * n + p];
                worst = worst.max((got + 2.0 * params.b_coef * lq2[c]).abs());
            }
        }
        assert!(worst < 1e-12, "bulk sign difference mismatch {worst}");

        // With the literal forcing the split identity fails by a definite
        // margin at nonzero coupling (the flag exists to expose exactly this).
        let u_hat = grid::forward(&u.0);
        let q_hat = grid::forward(&q.0);
        let (lin_u, _) = linear_rhs_spectral(&u_hat, &q_hat, &params);
        let (f_hat, _) = nonlinear_rhs_spectral(&u_hat, &q_hat, &params, false);
        let mut split_u = grid::leray_project(&f_hat).unwrap();
        for (s, l) in split_u.data.iter_mut().zip(lin_u.data.iter()) {
            *s += l;
        }
        let (full_u, _) = assemble_full_rhs(&u, &q, &params);
        let su = grid::inverse(&split_u);
        let defect = su
            .data
            .iter()
            .zip(full_u.data.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(
            defect > 1e-4 * full_u.max_abs(),
            "literal variant unexpectedly satisfies the split identity (defect {defect})"
        );
    }

    #[test]
    fn q_equation_rhs_is_traceless_and_symmetric() {
        let g = grid_spec(3, 8);
        let params = ModelParams::new(1.0, 0.4, 1.0, 0.9, 3).unwrap();
        let (u, q) = random_state(g, 501, 0.7);
        let (_, q_rhs) = assemble_full_rhs(&u, &q, &params);
        let (asym, tr) = symmetry_defects(&q_rhs);
        let scale = q_rhs.max_abs();
        assert!(tr < 1e-10 * scale, "trace {tr} scale {scale}");
        assert!(asym < 1e-10 * scale);
        let (_, g_hat) =
            nonlinear_rhs_spectral(&grid::forward(&u.0), &grid::forward(&q.0), &params, false);
        let gq = grid::inverse(&g_hat);
        let (gasym, gtr) = symmetry_defects(&gq);
        let gscale = gq.max_abs();
        assert!(gtr < 1e-10 * gscale);
        assert!(gasym < 1e-10 * gscale);
    }
}
