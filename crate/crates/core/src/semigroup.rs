//! Linear evolution: per-mode matrix exponentials, contour-integral semigroup
//! evaluation over the sector and frequency-split paths, the heat reduction
//! for the tensor trace, theoretical decay exponents, and decay-rate fitting.

use crate::grid::SpectralField;
use crate::linalg::{self, CMat, CVec};
use crate::params::ModelParams;
use crate::resolvent::{
    self, calibrate_lambda0, mode_matrix, resolvent_apply_mode, sigma0_for_beta, system_roots,
    SectorParams,
};
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemigroupError {
    #[error("quadrature spec invalid: nodes {nodes} (need >= 16), threshold {threshold:e} (need <= 1e-14)")]
    BadQuadSpec { nodes: usize, threshold: f64 },
    #[error("path {path:?} is not admissible at |xi| = {xi_mag} with split radius {a0}")]
    InadmissiblePath { path: PathSet, xi_mag: f64, a0: f64 },
    #[error("contour quadrature did not converge: last change {change:e} at {nodes} nodes per segment")]
    NoConvergence { change: f64, nodes: usize },
    #[error("decay fit needs at least 8 samples spanning a decade inside the window, got {0}")]
    TooFewSamples(usize),
    #[error("decay fit window ({0}, {1}) is invalid")]
    BadWindow(f64, f64),
    #[error("non-positive norm sample at t = {0}")]
    NonPositiveNorm(f64),
    #[error("exponent combination p = {p}, q = {q} not admissible")]
    BadExponents { p: f64, q: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("split radius a0 must lie in (0, 1), got {0}")]
    BadA0(f64),
}

/// Which integration path realizes the semigroup at a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSet {
    /// Two rays from `lambda_tilde0` at angles `+-(pi - sigma)`; valid at
    /// every mode.
    Sector,
    /// Arc around `-|xi|^2` plus connecting segments and rays; valid for
    /// `|xi| < 2 a0 / 3`.
    LowFreq,
    /// Rays from `-gamma_inf +- i gamma_inf_tilde` closed by a vertical
    /// segment; valid for `|xi| > a0 / 3`.
    HighFreq,
}

/// Geometry constants of the integration paths, derived from the model
/// parameters and the calibrated sector.
#[derive(Debug, Clone, Copy)]
pub struct PathParams {
    pub sigma: f64,
    pub lambda0: f64,
    pub lambda_tilde0: f64,
    /// Ray angle of the low-frequency path, `atan(1/8)`.
    pub sigma0_path: f64,
    pub gamma0: f64,
    /// `gamma0 (2 sqrt(65) + 1) / 8`.
    pub gamma0_tilde: f64,
    /// Low/high frequency split radius.
    pub a0: f64,
    /// `<= (a0/6)^2 / 2`; the high-frequency decay rate.
    pub gamma_inf: f64,
    /// Ray angle of the high-frequency path.
    pub sigma_hf: f64,
    pub gamma_inf_tilde: f64,
}

impl PathParams {
    pub fn derive(params: &ModelParams, sector: &SectorParams, a0: f64) -> Result<Self, SemigroupError> {
        if !(a0 > 0.0 && a0 < 1.0) {
            return Err(SemigroupError::BadA0(a0));
        }
        let sigma0_path = (1.0f64 / 8.0).atan();
        let sigma0 = sigma0_for_beta(params.beta);
        // The printed angle atan(1/8) only lies above sigma0 for small
        // coupling; otherwise calibrate just above the spectral angle.
        let gamma0_angle = if sigma0 < sigma0_path { sigma0_path } else { sigma0 + 0.05 };
        let gamma0 = calibrate_lambda0(params, gamma0_angle);
        let gamma0_tilde = gamma0 * (2.0 * 65f64.sqrt() + 1.0) / 8.0;
        let gamma_inf = 0.5 * (a0 / 6.0).powi(2);
        // beta = 0 collapses the spectral angle to zero and with it the ray
        // direction; fall back to a fixed oblique angle.
        let sigma_hf = if params.beta == 0.0 { std::f64::consts::FRAC_PI_4 } else { sigma0 };
        let lambda_tilde0_hf = 2.0 * sector.lambda0 / sigma_hf.sin();
        let gamma_inf_tilde = (lambda_tilde0_hf + gamma_inf) * sigma_hf.tan();
        Ok(Self {
            sigma: sector.sigma,
            lambda0: sector.lambda0,
            lambda_tilde0: 2.0 * sector.lambda0 / sector.sigma.sin(),
            sigma0_path,
            gamma0,
            gamma0_tilde,
            a0,
            gamma_inf,
            sigma_hf,
            gamma_inf_tilde,
        })
    }

    pub fn default_for(params: &ModelParams) -> Self {
        let sector = SectorParams::default_for(params);
        Self::derive(params, &sector, 0.1).expect("default split radius is valid")
    }

    /// Low-frequency geometry check: the denominator `gamma0 - |xi|^2` of the
    /// connecting-segment bound stays away from zero on `|xi| < a0`.
    pub fn a0_condition_value(&self, xi_mag: f64) -> f64 {
        let x2 = xi_mag * xi_mag;
        (self.gamma0 + self.gamma0_tilde + x2) / (self.gamma0 - x2)
    }
}

/// Composite Gauss-Legendre settings for the contour integrals.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub nodes_per_segment: usize,
    pub truncation_threshold: f64,
}

impl QuadratureSpec {
    pub fn new(nodes_per_segment: usize, truncation_threshold: f64) -> Result<Self, SemigroupError> {
        if nodes_per_segment < 16 || !(truncation_threshold <= 1e-14 && truncation_threshold > 0.0) {
            return Err(SemigroupError::BadQuadSpec {
                nodes: nodes_per_segment,
                threshold: truncation_threshold,
            });
        }
        Ok(Self { nodes_per_segment, truncation_threshold })
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_segment: 32, truncation_threshold: 1e-16 }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], Newton iteration on the
/// three-term recurrence, cached per order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("gauss cache poisoned");
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut nodes = vec![0.0; n];
            let mut weights = vec![0.0; n];
            for i in 0..n {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                for _ in 0..100 {
                    let (p, dp) = legendre(n, x);
                    let dx = p / dp;
                    x -= dx;
                    if dx.abs() < 1e-15 {
                        break;
                    }
                }
                let (_, dp) = legendre(n, x);
                nodes[i] = x;
                weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
            }
            (nodes, weights)
        })
        .clone()
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// One directed piece of an integration path.
#[derive(Debug, Clone, Copy)]
enum Segment {
    /// `lambda(s) = z0 + s dir`, traversed from `s0` to `s1`.
    Line { z0: Complex64, dir: Complex64, s0: f64, s1: f64 },
    /// `lambda(s) = center + r e^{is}`, traversed from `a0` to `a1`.
    Arc { center: Complex64, radius: f64, a0: f64, a1: f64 },
}

impl Segment {
    fn eval(&self, s: f64) -> (Complex64, Complex64) {
        match *self {
            Segment::Line { z0, dir, .. } => (z0 + dir * s, dir),
            Segment::Arc { center, radius, .. } => {
                let e = Complex64::from_polar(radius, s);
                (center + e, Complex64::new(0.0, 1.0) * e)
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            Segment::Line { s0, s1, .. } => (s0, s1),
            Segment::Arc { a0, a1, .. } => (a0, a1),
        }
    }
}

fn ray_cutoff(t: f64, threshold: f64, base_re: f64, max_re: f64, cos_angle: f64) -> f64 {
    // Truncate where exp((Re lambda - max_re) t) falls below the threshold.
    let budget = (1.0 / threshold).ln() / t.max(1e-9) + (max_re - base_re).max(0.0);
    1.2 * budget / cos_angle
}

fn build_segments(
    path: PathSet,
    xi_mag: f64,
    t: f64,
    pp: &PathParams,
    threshold: f64,
) -> Result<Vec<Segment>, SemigroupError> {
    let x2 = xi_mag * xi_mag;
    match path {
        PathSet::Sector => {
            let dir_up = Complex64::from_polar(1.0, std::f64::consts::PI - pp.sigma);
            let dir_dn = dir_up.conj();
            let z0 = Complex64::new(pp.lambda_tilde0, 0.0);
            let smax = ray_cutoff(t, threshold, pp.lambda_tilde0, pp.lambda_tilde0, pp.sigma.cos());
            Ok(vec![
                Segment::Line { z0, dir: dir_dn, s0: smax, s1: 0.0 },
                Segment::Line { z0, dir: dir_up, s0: 0.0, s1: smax },
            ])
        }
        PathSet::LowFreq => {
            if !(xi_mag < 2.0 * pp.a0 / 3.0) {
                return Err(SemigroupError::InadmissiblePath { path, xi_mag, a0: pp.a0 });
            }
            let r = x2 / 4.0;
            let center = Complex64::new(-x2, 0.0);
            let g0 = Complex64::new(-pp.gamma0, pp.gamma0_tilde);
            let top0 = Complex64::new(-x2, r);
            let dir2_up = g0 - top0;
            let dir3_up = Complex64::from_polar(1.0, std::f64::consts::PI - pp.sigma0_path);
            let max_re = -x2 + r;
            let smax =
                ray_cutoff(t, threshold, -pp.gamma0, max_re, pp.sigma0_path.cos()).max(1.0);
            Ok(vec![
                Segment::Line { z0: g0.conj(), dir: dir3_up.conj(), s0: smax, s1: 0.0 },
                Segment::Line { z0: top0.conj(), dir: dir2_up.conj(), s0: 1.0, s1: 0.0 },
                Segment::Arc { center, radius: r, a0: -std::f64::consts::FRAC_PI_2, a1: 0.0 },
                Segment::Arc { center, radius: r, a0: 0.0, a1: std::f64::consts::FRAC_PI_2 },
                Segment::Line { z0: top0, dir: dir2_up, s0: 0.0, s1: 1.0 },
                Segment::Line { z0: g0, dir: dir3_up, s0: 0.0, s1: smax },
            ])
        }
        PathSet::HighFreq => {
            if !(xi_mag > pp.a0 / 3.0) {
                return Err(SemigroupError::InadmissiblePath { path, xi_mag, a0: pp.a0 });
            }
            let corner_up = Complex64::new(-pp.gamma_inf, pp.gamma_inf_tilde);
            let dir4_up = Complex64::from_polar(1.0, std::f64::consts::PI - pp.sigma_hf);
            let smax =
                ray_cutoff(t, threshold, -pp.gamma_inf, -pp.gamma_inf, pp.sigma_hf.cos()).max(1.0);
            let origin = Complex64::new(-pp.gamma_inf, 0.0);
            Ok(vec![
                Segment::Line { z0: corner_up.conj(), dir: dir4_up.conj(), s0: smax, s1: 0.0 },
                Segment::Line { z0: origin, dir: Complex64::new(0.0, -1.0), s0: pp.gamma_inf_tilde, s1: 0.0 },
                Segment::Line { z0: origin, dir: Complex64::new(0.0, 1.0), s0: 0.0, s1: pp.gamma_inf_tilde },
                Segment::Line { z0: corner_up, dir: dir4_up, s0: 0.0, s1: smax },
            ])
        }
    }
}

/// Evaluate `(1 / 2 pi i) integral of e^{lambda t} R(lambda)(f, g) d lambda`
/// over the requested path by composite Gauss-Legendre quadrature with node
/// doubling.  The datum is a single Fourier mode.
pub fn contour_semigroup_apply(
    path: PathSet,
    t: f64,
    f: &[Complex64],
    g: &[Complex64],
    xi: &[f64],
    params: &ModelParams,
    pp: &PathParams,
    quad: &QuadratureSpec,
) -> Result<(Vec<Complex64>, Vec<Complex64>), SemigroupError> {
    if t <= 0.0 {
        return Err(SemigroupError::NegativeTime(t));
    }
    let dim = params.dim;
    let xi_mag = xi[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let segments = build_segments(path, xi_mag, t, pp, quad.truncation_threshold)?;
    let size = dim + dim * dim;

    let eval_total = |n: usize| -> Vec<Complex64> {
        let (nodes, weights) = gauss_legendre(n);
        let mut acc = vec![Complex64::new(0.0, 0.0); size];
        for seg in &segments {
            let (s0, s1) = seg.range();
            let half = 0.5 * (s1 - s0);
            let mid = 0.5 * (s0 + s1);
            for (x, w) in nodes.iter().zip(weights.iter()) {
                let s = mid + half * x;
                let (lambda, dlambda) = seg.eval(s);
                let (u, q, _) = resolvent_apply_mode(lambda, &xi[..dim], f, g, params);
                let factor = (lambda * t).exp() * dlambda * (w * half);
                for (j, v) in u.iter().enumerate() {
                    acc[j] += factor * v;
                }
                for (c, v) in q.iter().enumerate() {
                    acc[dim + c] += factor * v;
                }
            }
        }
        let scale = Complex64::new(0.0, -1.0 / (2.0 * std::f64::consts::PI));
        acc.iter().map(|v| v * scale).collect()
    };

    let mut n = quad.nodes_per_segment;
    let mut prev = eval_total(n);
    loop {
        n *= 2;
        let cur = eval_total(n);
        let change = prev
            .iter()
            .zip(cur.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        let scale = cur.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(1e-30);
        if change <= 1e-8 * scale.max(1.0) {
            let u = cur[..dim].to_vec();
            let q = cur[dim..].to_vec();
            return Ok((u, q));
        }
        if n > 8192 {
            return Err(SemigroupError::NoConvergence { change, nodes: n });
        }
        prev = cur;
    }
}

/// Dense matrix exponential `exp(t L(xi))`: spectral path when the
/// eigenvector basis is well conditioned, otherwise scaling-and-squaring
/// with the rational core.  (The coupled operator is defective whenever the
/// compressive velocity component resonates with the tensor trace, so the
/// rational branch is the common one for `beta != 0`.)
pub fn mode_exponential(xi: &[f64], t: f64, params: &ModelParams) -> Result<CMat, SemigroupError> {
    if t < 0.0 {
        return Err(SemigroupError::NegativeTime(t));
    }
    let op = mode_matrix(xi, params);
    let size = op.matrix.nrows();
    if t == 0.0 {
        return Ok(CMat::identity(size, size));
    }
    let a = &op.matrix * Complex64::new(t, 0.0);
    if let Ok((vals, vecs, cond)) = linalg::try_eigen(&a) {
        if cond < 1e6 {
            if let Some(vinv) = vecs.clone().lu().try_inverse() {
                let lam = CMat::from_diagonal(&CVec::from_iterator(
                    size,
                    vals.iter().map(|v| v.exp()),
                ));
                return Ok(&vecs * lam * vinv);
            }
        }
    }
    Ok(linalg::expm_pade(&a))
}

/// Orthonormal basis of the plane orthogonal to `xi` (one vector in 2-D,
/// two in 3-D).
pub fn transverse_basis(xi: &[f64], dim: usize) -> Vec<[f64; 3]> {
    let norm: f64 = xi[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hat = [0.0; 3];
    for a in 0..dim {
        hat[a] = xi[a] / norm;
    }
    if dim == 2 {
        vec![[-hat[1], hat[0], 0.0]]
    } else {
        // Start from the axis least aligned with xi.
        let mut axis = [0.0; 3];
        let amin =
            (0..3).min_by(|&a, &b| hat[a].abs().partial_cmp(&hat[b].abs()).unwrap()).unwrap();
        axis[amin] = 1.0;
        let dot: f64 = (0..3).map(|a| axis[a] * hat[a]).sum();
        let mut e1 = [0.0; 3];
        for a in 0..3 {
            e1[a] = axis[a] - dot * hat[a];
        }
        let n1: f64 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in e1.iter_mut() {
            *v /= n1;
        }
        let e2 = [
            hat[1] * e1[2] - hat[2] * e1[1],
            hat[2] * e1[0] - hat[0] * e1[2],
            hat[0] * e1[1] - hat[1] * e1[0],
        ];
        vec![e1, e2]
    }
}

/// Entrywise `exp(t M) v` for the 2x2 coupling block
/// `[[-|xi|^2, i beta |xi|^2], [i beta |xi|^2 / 2, -(|xi|^2 + a)]]`
/// via two-point spectral interpolation (Hermite fallback near confluence).
fn coupled_block_exp(x2: f64, t: f64, params: &ModelParams, v: [Complex64; 2]) -> [Complex64; 2] {
    let (lp, lm) = system_roots(x2.sqrt(), params);
    let m = [
        [Complex64::new(-x2, 0.0), Complex64::new(0.0, params.beta * x2)],
        [Complex64::new(0.0, 0.5 * params.beta * x2), Complex64::new(-(x2 + params.a), 0.0)],
    ];
    let apply = |mat: &[[Complex64; 2]; 2], x: &[Complex64; 2]| {
        [mat[0][0] * x[0] + mat[0][1] * x[1], mat[1][0] * x[0] + mat[1][1] * x[1]]
    };
    let gap = (lp - lm).norm();
    let scale = lp.norm().max(lm.norm()).max(1.0);
    if gap > 1e-8 * scale {
        // exp(tM) = e^{t lp}(M - lm)/(lp - lm) + e^{t lm}(M - lp)/(lm - lp)
        let num_p = {
            let mut w = apply(&m, &v);
            w[0] -= lm * v[0];
            w[1] -= lm * v[1];
            w
        };
        let num_m = {
            let mut w = apply(&m, &v);
            w[0] -= lp * v[0];
            w[1] -= lp * v[1];
            w
        };
        let cp = (lp * t).exp() / (lp - lm);
        let cm = (lm * t).exp() / (lm - lp);
        [cp * num_p[0] + cm * num_m[0], cp * num_p[1] + cm * num_m[1]]
    } else {
        // Near-confluent pair: first-order Hermite interpolation.
        let lam = 0.5 * (lp + lm);
        let e = (lam * t).exp();
        let mut w = apply(&m, &v);
        w[0] = e * (v[0] + t * (w[0] - lam * v[0]));
        w[1] = e * (v[1] + t * (w[1] - lam * v[1]));
        w
    }
}

/// Closed-form semigroup action at one mode for constrained data
/// (`xi . u = 0`, symmetric `Q`): trace rides the heat factor, each
/// transverse velocity component pairs with one tensor direction, and the
/// remaining tensor directions relax with rate `|xi|^2 + a`.
pub fn apply_mode_semigroup(
    xi: &[f64],
    t: f64,
    u: &[Complex64],
    q: &[Complex64],
    params: &ModelParams,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let dim = params.dim;
    let x2: f64 = xi[..dim].iter().map(|v| v * v).sum();
    if x2 == 0.0 {
        // Mean mode: velocity frozen, traceless tensor part relaxes at rate a.
        let tr: Complex64 = (0..dim).map(|i| q[i * dim + i]).sum();
        let decay = (-params.a * t).exp();
        let mut qt = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let mut v = q[i * dim + j];
                if i == j {
                    v -= tr / dim as f64;
                }
                qt[i * dim + j] = v * decay;
                if i == j {
                    qt[i * dim + j] += tr / dim as f64;
                }
            }
        }
        return (u.to_vec(), qt);
    }
    let heat = (-x2 * t).exp();
    let relax = (-(x2 + params.a) * t).exp();
    let tr: Complex64 = (0..dim).map(|i| q[i * dim + i]).sum();

    // Traceless part and its coupled components m_e = e^T Q' xi.
    let basis = transverse_basis(&xi[..dim], dim);
    let mut qprime = q.to_vec();
    for i in 0..dim {
        qprime[i * dim + i] -= tr / dim as f64;
    }
    let mut u_out = vec![Complex64::new(0.0, 0.0); dim];
    let mut coupled = Vec::with_capacity(basis.len());
    for e in &basis {
        let ue: Complex64 = (0..dim).map(|a| u[a] * e[a]).sum();
        let mut me = Complex64::new(0.0, 0.0);
        for a in 0..dim {
            for b in 0..dim {
                me += qprime[a * dim + b] * e[a] * xi[b];
            }
        }
        let w = coupled_block_exp(x2, t, params, [ue, me]);
        coupled.push(w);
        // Remove the evolved pair's tensor direction from Q' to leave R.
        for a in 0..dim {
            for b in 0..dim {
                qprime[a * dim + b] -= me / x2 * (xi[a] * e[b] + e[a] * xi[b]);
            }
        }
        for a in 0..dim {
            u_out[a] += w[0] * e[a];
        }
    }
    // Any compressive residue rides the plain heat factor (the caller is
    // expected to feed solenoidal velocity modes).
    let xdotu: Complex64 = (0..dim).map(|a| u[a] * xi[a]).sum();
    if xdotu.norm() > 0.0 {
        for a in 0..dim {
            u_out[a] += heat * xdotu * xi[a] / x2;
        }
    }

    let mut q_out = vec![Complex64::new(0.0, 0.0); dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            let mut v = relax * qprime[a * dim + b];
            if a == b {
                v += heat * tr / dim as f64;
            }
            q_out[a * dim + b] = v;
        }
    }
    for (e, w) in basis.iter().zip(coupled.iter()) {
        for a in 0..dim {
            for b in 0..dim {
                q_out[a * dim + b] += w[1] / x2 * (xi[a] * e[b] + e[a] * xi[b]);
            }
        }
    }
    (u_out, q_out)
}

/// Evolve whole spectral fields under the linear semigroup via the per-mode
/// closed form.
pub fn evolve_linear_field(
    u_hat: &SpectralField,
    q_hat: &SpectralField,
    t: f64,
    params: &ModelParams,
) -> (SpectralField, SpectralField) {
    let grid = u_hat.grid;
    let dim = grid.dim;
    let n = grid.n_points();
    let mut u_out = SpectralField::zeros(grid, dim);
    let mut q_out = SpectralField::zeros(grid, dim * dim);
    for p in 0..n {
        let xi = grid.wavevector(p);
        let um = u_hat.mode(p);
        let qm = q_hat.mode(p);
        let (ut, qt) = apply_mode_semigroup(&xi[..dim], t, &um, &qm, params);
        u_out.set_mode(p, &ut);
        q_out.set_mode(p, &qt);
    }
    (u_out, q_out)
}

/// Smooth radial cutoff: 1 on `r <= 1/3`, 0 on `r >= 2/3`, the bump profile
/// `exp(1 - 1/(1 - s^2))` across the transition.
pub fn smooth_cutoff(r: f64) -> f64 {
    if r <= 1.0 / 3.0 {
        1.0
    } else if r >= 2.0 / 3.0 {
        0.0
    } else {
        let s = (r - 1.0 / 3.0) * 3.0;
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Partition a spectral field into low- and high-frequency parts with the
/// smooth cutoff scaled by the split radius `a0` (the low part is supported
/// in `|xi| <= 2 a0 / 3`, the high part vanishes for `|xi| <= a0 / 3`, and
/// the two sum back to the field exactly).
pub fn frequency_split(field: &SpectralField, a0: f64) -> (SpectralField, SpectralField) {
    let grid = field.grid;
    let n = grid.n_points();
    let mut low = field.clone();
    let mut high = field.clone();
    for p in 0..n {
        let xi = grid.wavevector(p);
        let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt() / a0;
        let w = smooth_cutoff(r);
        for c in 0..field.comps {
            low.data[c * n + p] *= w;
            high.data[c * n + p] *= 1.0 - w;
        }
    }
    (low, high)
}

/// Heat propagation of the tensor trace: `d_hat(t) = e^{-|xi|^2 t} d_hat(0)`.
pub fn heat_trace_propagate(d0: &SpectralField, t: f64) -> SpectralField {
    let grid = d0.grid;
    let n = grid.n_points();
    let mut out = d0.clone();
    for p in 0..n {
        let xi = grid.wavevector(p);
        let x2: f64 = xi.iter().map(|v| v * v).sum();
        let factor = (-x2 * t).exp();
        for c in 0..out.comps {
            out.data[c * n + p] *= factor;
        }
    }
    out
}

/// Theoretical decay exponent `N/2 (1/q - 1/p) + j/2 + k` with admissibility
/// checks; `q2_caveat` marks the combinations whose time-derivative estimate
/// excludes `q = 2`.
#[derive(Debug, Clone, Copy)]
pub struct DecayRate {
    pub exponent: f64,
    pub q2_caveat: bool,
}

pub fn theoretical_rate(p: f64, q: f64, j: u32, k: u32, n: usize) -> Result<DecayRate, SemigroupError> {
    if !(q >= 1.0 && p >= q) {
        return Err(SemigroupError::BadExponents { p, q });
    }
    if !(q <= 2.0 && p >= 2.0) {
        return Err(SemigroupError::BadExponents { p, q });
    }
    let inv_p = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let exponent = n as f64 / 2.0 * (1.0 / q - inv_p) + j as f64 / 2.0 + k as f64;
    Ok(DecayRate { exponent, q2_caveat: k > 0 && q == 2.0 })
}

/// Least-squares decay-exponent fit on log-log axes.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub samples: Vec<(f64, f64)>,
    pub window: (f64, f64),
    pub fitted_exponent: f64,
    pub stderr: f64,
    /// Slope when a `(1 + |log t|)` correction factor is divided out first;
    /// reported alongside the pure power fit rather than replacing it.
    pub log_corrected_exponent: f64,
    pub theoretical_exponent: Option<f64>,
    pub relative_deviation: Option<f64>,
}

pub fn decay_fit(
    series: &[(f64, f64)],
    window: (f64, f64),
    theoretical: Option<f64>,
) -> Result<DecayReport, SemigroupError> {
    if !(window.0 > 0.0 && window.1 > window.0) {
        return Err(SemigroupError::BadWindow(window.0, window.1));
    }
    let mut kept = Vec::new();
    for &(t, v) in series {
        if t >= window.0 && t <= window.1 {
            if !(v > 0.0) {
                return Err(SemigroupError::NonPositiveNorm(t));
            }
            kept.push((t, v));
        }
    }
    if kept.len() < 8 {
        return Err(SemigroupError::TooFewSamples(kept.len()));
    }
    let tmin = kept.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let tmax = kept.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if tmax / tmin < 10.0 {
        return Err(SemigroupError::TooFewSamples(kept.len()));
    }
    let fit = |pts: &[(f64, f64)]| -> (f64, f64) {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let resid: f64 = pts
            .iter()
            .map(|p| {
                let e = p.1 - my - slope * (p.0 - mx);
                e * e
            })
            .sum();
        let stderr = (resid / (n - 2.0) / sxx).sqrt();
        (slope, stderr)
    };
    let logpts: Vec<(f64, f64)> = kept.iter().map(|&(t, v)| (t.ln(), v.ln())).collect();
    let (slope, stderr) = fit(&logpts);
    let corrected: Vec<(f64, f64)> = kept
        .iter()
        .map(|&(t, v)| (t.ln(), (v / (1.0 + t.ln().abs())).ln()))
        .collect();
    let (slope_corr, _) = fit(&corrected);
    let relative_deviation = theoretical.map(|th| (slope.abs() - th.abs()).abs() / th.abs().max(1e-300));
    Ok(DecayReport {
        samples: kept,
        window,
        fitted_exponent: slope,
        stderr,
        log_corrected_exponent: slope_corr,
        theoretical_exponent: theoretical,
        relative_deviation,
    })
}

/// Frobenius norm of a complex matrix (operator-norm proxy for the
/// high-frequency decay sweep).
pub fn fro_norm(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Record `sup_t ||exp(t L)|| e^{gamma_inf t}` over a time grid for one mode;
/// finite values witness the exponential high-frequency bound.
pub fn high_freq_decay_constant(
    xi: &[f64],
    params: &ModelParams,
    pp: &PathParams,
    times: &[f64],
) -> Result<f64, SemigroupError> {
    let mut c = 0.0f64;
    for &t in times {
        let e = mode_exponential(xi, t, params)?;
        c = c.max(fro_norm(&e) * (pp.gamma_inf * t).exp());
    }
    Ok(c)
}

pub use resolvent::ResolventError as _ResolventErrorReexportGuard;
