//! Small dense complex linear algebra used by the per-mode operators:
//! Pade scaling-and-squaring matrix exponential, the phi functions of
//! exponential integrators, an eigendecomposition attempt with conditioning
//! guard, and LU solves with a condition estimate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular or numerically ill-conditioned (cond ~ {0:.3e})")]
    IllConditioned(f64),
    #[error("LU factorization failed")]
    LuFailed,
    #[error("eigendecomposition unavailable: {0}")]
    EigenUnavailable(String),
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn one_norm(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Solve `A x = b` by LU with partial pivoting.
pub fn lu_solve(a: &CMat, b: &CVec) -> Result<CVec, LinalgError> {
    let lu = a.clone().lu();
    lu.solve(b).ok_or(LinalgError::LuFailed)
}

/// One-norm condition estimate via the explicit inverse (matrices here are
/// at most 12 x 12).
pub fn cond_one(a: &CMat) -> f64 {
    match a.clone().lu().try_inverse() {
        Some(inv) => one_norm(a) * one_norm(&inv),
        None => f64::INFINITY,
    }
}

// Pade(13) coefficients for the scaling-and-squaring exponential
// (Higham 2005, SIAM J. Matrix Anal. Appl. 26(4)).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling-and-squaring with a Pade(13) core.
pub fn expm_pade(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as u32 } else { 0 };
    let scale = Complex64::new(1.0 / 2f64.powi(s as i32), 0.0);
    let m = a * scale;

    let m2 = &m * &m;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;
    let id = CMat::identity(n, n);

    let u_inner = &m6 * (&m6 * c(PADE13[13]) + &m4 * c(PADE13[11]) + &m2 * c(PADE13[9]))
        + &m6 * c(PADE13[7])
        + &m4 * c(PADE13[5])
        + &m2 * c(PADE13[3])
        + &id * c(PADE13[1]);
    let u = &m * &u_inner;
    let v = &m6 * (&m6 * c(PADE13[12]) + &m4 * c(PADE13[10]) + &m2 * c(PADE13[8]))
        + &m6 * c(PADE13[6])
        + &m4 * c(PADE13[4])
        + &m2 * c(PADE13[2])
        + &id * c(PADE13[0]);

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut e = lhs
        .lu()
        .solve(&rhs)
        .expect("Pade denominator is nonsingular for scaled input");
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Exponential together with `phi1(z) = (e^z - 1)/z` and
/// `phi2(z) = (e^z - z - 1)/z^2`, all as matrix functions, computed by a
/// scaled Taylor core and squaring/doubling recurrences.
pub fn phi_matrices(a: &CMat) -> (CMat, CMat, CMat) {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let b = a * Complex64::new(1.0 / 2f64.powi(s as i32), 0.0);

    let id = CMat::identity(n, n);
    let mut e = CMat::zeros(n, n);
    let mut p1 = CMat::zeros(n, n);
    let mut p2 = CMat::zeros(n, n);
    // e   = sum B^k / k!
    // phi1 = sum B^k / (k+1)!
    // phi2 = sum B^k / (k+2)!
    let mut term = id.clone();
    let mut kfact = 1.0f64;
    for k in 0..=24u32 {
        if k > 0 {
            term = &term * &b;
            kfact *= k as f64;
        }
        let k1 = kfact * (k as f64 + 1.0);
        let k2 = k1 * (k as f64 + 2.0);
        e += &term * Complex64::new(1.0 / kfact, 0.0);
        p1 += &term * Complex64::new(1.0 / k1, 0.0);
        p2 += &term * Complex64::new(1.0 / k2, 0.0);
        if one_norm(&term) / kfact < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        // Order matters: phi2 and phi1 use the previous-level values.
        let p2_next = (&p1 * &p1 + &p2 * c(2.0)) * Complex64::new(0.25, 0.0);
        let p1_next = (&p1 * (&e + &id)) * Complex64::new(0.5, 0.0);
        let e_next = &e * &e;
        p2 = p2_next;
        p1 = p1_next;
        e = e_next;
    }
    (e, p1, p2)
}

/// Eigendecomposition attempt: complex Schur form, eigenvectors by back
/// substitution on the triangular factor.  Returns eigenvalues, eigenvector
/// matrix, and its one-norm condition number.  Fails on (near-)defective
/// spectra, where the triangular solve hits a tiny pivot.
pub fn try_eigen(a: &CMat) -> Result<(CVec, CMat, f64), LinalgError> {
    let n = a.nrows();
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| LinalgError::EigenUnavailable("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let scale = one_norm(&t).max(1e-300);
    let mut vecs = CMat::zeros(n, n);
    for i in 0..n {
        let lam = t[(i, i)];
        let mut y = CVec::zeros(n);
        y[i] = Complex64::new(1.0, 0.0);
        for j in (0..i).rev() {
            let mut rhs = Complex64::new(0.0, 0.0);
            for k in (j + 1)..=i {
                rhs -= t[(j, k)] * y[k];
            }
            let piv = t[(j, j)] - lam;
            if piv.norm() < 1e-12 * scale {
                return Err(LinalgError::EigenUnavailable(format!(
                    "repeated eigenvalue near {lam}: triangular pivot {piv}"
                )));
            }
            y[j] = rhs / piv;
        }
        let norm = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        vecs.set_column(i, &(&q * (y / Complex64::new(norm, 0.0))));
    }
    let cond = cond_one(&vecs);
    let vals = CVec::from_iterator(n, (0..n).map(|i| t[(i, i)]));
    Ok((vals, vecs, cond))
}

/// Eigenvalues only (diagonal of the complex Schur factor).
pub fn eigenvalues(a: &CMat) -> Result<Vec<Complex64>, LinalgError> {
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| LinalgError::EigenUnavailable("Schur iteration did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..a.nrows()).map(|i| t[(i, i)]).collect())
}
