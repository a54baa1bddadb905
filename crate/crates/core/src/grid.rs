//! Periodic-box discretization: Fourier transforms, spectral differentiation,
//! dealiasing, the solenoidal (Leray) projection, and grid quadrature norms.
//!
//! Conventions, fixed once for the whole crate:
//! * grid points are `x_j = j L / M` along each axis, row-major flattening;
//! * wavenumbers are `xi_k = 2 pi k / L` with `k in {-M/2, ..., M/2 - 1}`
//!   stored in FFT order (`k = idx` for `idx < M/2`, else `idx - M`);
//! * the forward transform is the plain DFT sum, the inverse carries the
//!   `1 / M^N` factor, so a constant field has zero-mode coefficient
//!   `constant * M^N`.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDim(usize),
    #[error("points per dim must be a power of two >= 8, got {0}")]
    BadPoints(usize),
    #[error("box length must be positive, got {0}")]
    BadLength(f64),
    #[error("data length {got} does not match {comps} components on {points} grid points")]
    ShapeMismatch { got: usize, comps: usize, points: usize },
    #[error("norm exponent must satisfy q >= 1, got {0}")]
    BadExponent(f64),
    #[error("sobolev order must be <= 3, got {0}")]
    BadSobolevOrder(usize),
    #[error("field contains a non-finite entry at component {comp}, point {point}")]
    NonFinite { comp: usize, point: usize },
}

/// Discretization of the periodic box `[0, L)^N` with `M` points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub points_per_dim: usize,
    pub box_length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, points_per_dim: usize, box_length: f64) -> Result<Self, GridError> {
        if !(dim == 2 || dim == 3) {
            return Err(GridError::BadDim(dim));
        }
        let m = points_per_dim;
        if m < 8 || !m.is_power_of_two() {
            return Err(GridError::BadPoints(m));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(GridError::BadLength(box_length));
        }
        Ok(Self { dim, points_per_dim, box_length })
    }

    pub fn n_points(&self) -> usize {
        self.points_per_dim.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.points_per_dim as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Signed integer mode index along one axis for a storage index.
    pub fn signed_index(&self, idx: usize) -> i64 {
        let m = self.points_per_dim as i64;
        let idx = idx as i64;
        if idx < m / 2 {
            idx
        } else {
            idx - m
        }
    }

    /// Wavenumber along one axis for a storage index.
    pub fn wavenumber(&self, idx: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_index(idx) as f64 / self.box_length
    }

    /// Decode a flat mode/point index into per-axis indices.
    pub fn decode(&self, flat: usize) -> [usize; 3] {
        let m = self.points_per_dim;
        let mut out = [0usize; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rem % m;
            rem /= m;
        }
        out
    }

    /// Wavevector `xi` of a flat mode index (entries beyond `dim` are zero).
    pub fn wavevector(&self, flat: usize) -> [f64; 3] {
        let idx = self.decode(flat);
        let mut xi = [0.0; 3];
        for axis in 0..self.dim {
            xi[axis] = self.wavenumber(idx[axis]);
        }
        xi
    }

    /// Physical coordinates of a flat point index.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let idx = self.decode(flat);
        let dx = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = idx[axis] as f64 * dx;
        }
        x
    }

    /// Full table of wavevectors, one per mode.
    pub fn grid_wavenumbers(&self) -> Vec<[f64; 3]> {
        (0..self.n_points()).map(|p| self.wavevector(p)).collect()
    }

    /// Time beyond which periodic images contaminate whole-space decay
    /// experiments, estimated from heat-kernel spreading.
    pub fn wraparound_time(&self) -> f64 {
        let half = 0.5 * self.box_length;
        half * half / 4.0
    }
}

/// Real-valued field sampled on the grid, component-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub grid: GridSpec,
    pub comps: usize,
    pub data: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(grid: GridSpec, comps: usize) -> Self {
        Self { grid, comps, data: vec![0.0; comps * grid.n_points()] }
    }

    pub fn from_data(grid: GridSpec, comps: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != comps * grid.n_points() {
            return Err(GridError::ShapeMismatch { got: data.len(), comps, points: grid.n_points() });
        }
        Ok(Self { grid, comps, data })
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.grid.n_points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.n_points();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        let n = self.grid.n_points();
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(GridError::NonFinite { comp: i / n, point: i % n });
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Complex Fourier coefficients of a field, same layout as [`PhysicalField`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub comps: usize,
    pub data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec, comps: usize) -> Self {
        Self { grid, comps, data: vec![Complex64::new(0.0, 0.0); comps * grid.n_points()] }
    }

    pub fn from_data(grid: GridSpec, comps: usize, data: Vec<Complex64>) -> Result<Self, GridError> {
        if data.len() != comps * grid.n_points() {
            return Err(GridError::ShapeMismatch { got: data.len(), comps, points: grid.n_points() });
        }
        Ok(Self { grid, comps, data })
    }

    pub fn comp(&self, c: usize) -> &[Complex64] {
        let n = self.grid.n_points();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.n_points();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Gather all components of one mode into a small buffer.
    pub fn mode(&self, flat: usize) -> Vec<Complex64> {
        let n = self.grid.n_points();
        (0..self.comps).map(|c| self.data[c * n + flat]).collect()
    }

    pub fn set_mode(&mut self, flat: usize, values: &[Complex64]) {
        let n = self.grid.n_points();
        for (c, v) in values.iter().enumerate() {
            self.data[c * n + flat] = *v;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest relative violation of the Hermitian symmetry
    /// `f_hat(-k) = conj(f_hat(k))` expected of real fields.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let grid = self.grid;
        let m = grid.points_per_dim;
        let n = grid.n_points();
        let mut worst = 0.0f64;
        for c in 0..self.comps {
            let data = &self.data[c * n..(c + 1) * n];
            for flat in 0..n {
                let idx = grid.decode(flat);
                let mut neg = [0usize; 3];
                for axis in 0..grid.dim {
                    neg[axis] = (m - idx[axis]) % m;
                }
                let nflat = encode(grid, &neg);
                let d = (data[nflat] - data[flat].conj()).norm();
                worst = worst.max(d / scale);
            }
        }
        worst
    }
}

fn encode(grid: GridSpec, idx: &[usize; 3]) -> usize {
    let m = grid.points_per_dim;
    let mut flat = 0usize;
    for axis in 0..grid.dim {
        flat = flat * m + idx[axis];
    }
    flat
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().expect("fft plan cache poisoned");
    cache
        .entry((len, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if forward {
                planner.plan_fft_forward(len)
            } else {
                planner.plan_fft_inverse(len)
            }
        })
        .clone()
}

/// In-place unnormalized FFT along `axis` of one component stored row-major.
fn fft_axis(data: &mut [Complex64], m: usize, axis: usize, dim: usize, forward: bool) {
    let fft = plan(m, forward);
    let post = m.pow((dim - 1 - axis) as u32);
    if post == 1 {
        data.par_chunks_mut(m).for_each_init(
            || vec![Complex64::default(); fft.get_inplace_scratch_len()],
            |scratch, line| fft.process_with_scratch(line, scratch),
        );
        return;
    }
    // Permute so the axis becomes contiguous, transform, permute back.
    let mut buf = vec![Complex64::default(); data.len()];
    buf.par_chunks_mut(post * m).enumerate().for_each(|(p, chunk)| {
        let src = &data[p * m * post..(p + 1) * m * post];
        for j in 0..m {
            for q in 0..post {
                chunk[q * m + j] = src[j * post + q];
            }
        }
    });
    buf.par_chunks_mut(m).for_each_init(
        || vec![Complex64::default(); fft.get_inplace_scratch_len()],
        |scratch, line| fft.process_with_scratch(line, scratch),
    );
    data.par_chunks_mut(m * post).enumerate().for_each(|(p, chunk)| {
        let src = &buf[p * post * m..(p + 1) * post * m];
        for j in 0..m {
            for q in 0..post {
                chunk[j * post + q] = src[q * m + j];
            }
        }
    });
}

fn fft_all_axes(field: &mut SpectralField, forward: bool) {
    let grid = field.grid;
    let m = grid.points_per_dim;
    let n = grid.n_points();
    for c in 0..field.comps {
        let comp = &mut field.data[c * n..(c + 1) * n];
        for axis in 0..grid.dim {
            fft_axis(comp, m, axis, grid.dim, forward);
        }
    }
    if !forward {
        let scale = 1.0 / n as f64;
        field.data.par_iter_mut().for_each(|v| *v *= scale);
    }
}

/// Forward transform of a real field into Fourier coefficients.
pub fn forward(field: &PhysicalField) -> SpectralField {
    let mut out = SpectralField {
        grid: field.grid,
        comps: field.comps,
        data: field.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
    };
    fft_all_axes(&mut out, true);
    out
}

/// Inverse transform back to a real field; the imaginary residue of a
/// Hermitian-symmetric input is discarded.
pub fn inverse(field: &SpectralField) -> PhysicalField {
    let mut tmp = field.clone();
    fft_all_axes(&mut tmp, false);
    PhysicalField {
        grid: field.grid,
        comps: field.comps,
        data: tmp.data.iter().map(|v| v.re).collect(),
    }
}

/// Inverse transform keeping the complex values (diagnostics).
pub fn inverse_complex(field: &SpectralField) -> SpectralField {
    let mut tmp = field.clone();
    fft_all_axes(&mut tmp, false);
    tmp
}

/// Multiply every mode by `prod_j (i xi_j)^{alpha_j}`.
pub fn spectral_derivative(field: &SpectralField, multi_index: &[usize]) -> Result<SpectralField, GridError> {
    let order: usize = multi_index.iter().sum();
    if order > 3 {
        return Err(GridError::BadSobolevOrder(order));
    }
    let grid = field.grid;
    let n = grid.n_points();
    let factors: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let xi = grid.wavevector(p);
            let mut f = Complex64::new(1.0, 0.0);
            for axis in 0..grid.dim {
                let step = Complex64::new(0.0, xi[axis]);
                for _ in 0..multi_index.get(axis).copied().unwrap_or(0) {
                    f *= step;
                }
            }
            f
        })
        .collect();
    let mut out = field.clone();
    for c in 0..out.comps {
        let comp = out.comp_mut(c);
        comp.par_iter_mut().zip(factors.par_iter()).for_each(|(v, f)| *v *= f);
    }
    Ok(out)
}

/// Laplacian symbol `-|xi|^2` applied per mode.
pub fn spectral_laplacian(field: &SpectralField) -> SpectralField {
    let grid = field.grid;
    let n = grid.n_points();
    let factors: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| {
            let xi = grid.wavevector(p);
            -(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])
        })
        .collect();
    let mut out = field.clone();
    for c in 0..out.comps {
        let comp = out.comp_mut(c);
        comp.par_iter_mut().zip(factors.par_iter()).for_each(|(v, f)| *v *= f);
    }
    out
}

/// Sharp two-thirds-rule cutoff: any mode with an axis index `|k| > M/3`
/// is zeroed.
pub fn dealias(field: &SpectralField) -> SpectralField {
    let mut out = field.clone();
    dealias_mut(&mut out);
    out
}

pub fn dealias_mut(field: &mut SpectralField) {
    let grid = field.grid;
    let n = grid.n_points();
    let cutoff = grid.points_per_dim as f64 / 3.0;
    let keep: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|p| {
            let idx = grid.decode(p);
            (0..grid.dim).all(|axis| (grid.signed_index(idx[axis]).abs() as f64) <= cutoff)
        })
        .collect();
    for c in 0..field.comps {
        let comp = field.comp_mut(c);
        comp.par_iter_mut().zip(keep.par_iter()).for_each(|(v, k)| {
            if !k {
                *v = Complex64::new(0.0, 0.0);
            }
        });
    }
}

/// Zero every mode with an axis index on the Nyquist plane `k = -M/2`.
/// Real fields cannot resolve those modes, and their aliased wavevector
/// breaks the sign symmetry the solenoidal projection relies on.
pub fn zero_nyquist_mut(field: &mut SpectralField) {
    let grid = field.grid;
    let m = grid.points_per_dim;
    let n = grid.n_points();
    for p in 0..n {
        let idx = grid.decode(p);
        if (0..grid.dim).any(|a| idx[a] == m / 2) {
            for c in 0..field.comps {
                field.data[c * n + p] = Complex64::new(0.0, 0.0);
            }
        }
    }
}

/// Per-mode solenoidal projection `v -> v - xi (xi . v) / |xi|^2`; the zero
/// mode is left untouched.
pub fn leray_project(field: &SpectralField) -> Result<SpectralField, GridError> {
    let grid = field.grid;
    if field.comps != grid.dim {
        return Err(GridError::ShapeMismatch {
            got: field.comps,
            comps: grid.dim,
            points: grid.n_points(),
        });
    }
    let mut out = field.clone();
    leray_project_mut(&mut out);
    Ok(out)
}

pub fn leray_project_mut(field: &mut SpectralField) {
    let grid = field.grid;
    let dim = grid.dim;
    let n = grid.n_points();
    debug_assert_eq!(field.comps, dim);
    // Split the storage into per-component slices so modes can be updated in
    // parallel without aliasing.
    let (rest, _) = field.data.split_at_mut(dim * n);
    let mut comps: Vec<&mut [Complex64]> = rest.chunks_mut(n).collect();
    let comp_ptrs: Vec<*mut Complex64> = comps.iter_mut().map(|c| c.as_mut_ptr()).collect();
    struct SendPtr(*mut Complex64);
    unsafe impl Send for SendPtr {}
    unsafe impl Sync for SendPtr {}
    let ptrs: Vec<SendPtr> = comp_ptrs.into_iter().map(SendPtr).collect();
    (0..n).into_par_iter().for_each(|p| {
        let xi = grid.wavevector(p);
        let xi2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        if xi2 == 0.0 {
            return;
        }
        unsafe {
            let mut dot = Complex64::new(0.0, 0.0);
            for (c, sp) in ptrs.iter().enumerate() {
                dot += *sp.0.add(p) * xi[c];
            }
            let scale = dot / xi2;
            for (c, sp) in ptrs.iter().enumerate() {
                *sp.0.add(p) -= scale * xi[c];
            }
        }
    });
}

/// Largest divergence `|xi . v| / |xi|` over nonzero modes, relative to the
/// largest mode magnitude of the whole field.  (Per-mode normalization would
/// amplify the roundoff noise that physical-space round trips leave in
/// spectrally negligible modes.)
pub fn divergence_defect(field: &SpectralField) -> f64 {
    let grid = field.grid;
    let n = grid.n_points();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for p in 0..n {
        let xi = grid.wavevector(p);
        let xi_norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        let mode = field.mode(p);
        let mut dot = Complex64::new(0.0, 0.0);
        let mut mag = 0.0f64;
        for c in 0..field.comps {
            dot += mode[c] * xi[c];
            mag += mode[c].norm_sqr();
        }
        scale = scale.max(mag.sqrt());
        if xi_norm > 0.0 {
            worst = worst.max(dot.norm() / xi_norm);
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

fn multi_indices(dim: usize, order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    match dim {
        2 => {
            for a0 in 0..=order {
                out.push([a0, order - a0, 0]);
            }
        }
        3 => {
            for a0 in 0..=order {
                for a1 in 0..=(order - a0) {
                    out.push([a0, a1, order - a0 - a1]);
                }
            }
        }
        _ => unreachable!("grid dim is validated"),
    }
    out
}

/// Pointwise Euclidean magnitude over components, then the grid Riemann-sum
/// `L_q` norm (`q = inf` gives the grid maximum).
pub fn norm_lq(field: &PhysicalField, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::BadExponent(q));
    }
    let n = field.grid.n_points();
    let mut mags = vec![0.0f64; n];
    for c in 0..field.comps {
        let comp = field.comp(c);
        for (m, v) in mags.iter_mut().zip(comp.iter()) {
            *m += v * v;
        }
    }
    if q.is_infinite() {
        return Ok(mags.iter().fold(0.0f64, |m, v| m.max(v.sqrt())));
    }
    let dv = field.grid.cell_volume();
    // Sequential reduction keeps outputs bit-reproducible.
    let sum: f64 = mags.iter().map(|m| m.sqrt().powf(q)).sum();
    Ok((dv * sum).powf(1.0 / q))
}

/// Sobolev norm `sum_{j<=m} || grad^j f ||_{L_q}` with derivatives taken
/// spectrally (each multi-index of order `j` counted once).
pub fn field_norm(field: &PhysicalField, q: f64, sobolev_order: usize) -> Result<f64, GridError> {
    if sobolev_order > 3 {
        return Err(GridError::BadSobolevOrder(sobolev_order));
    }
    let mut total = norm_lq(field, q)?;
    if sobolev_order == 0 {
        return Ok(total);
    }
    let spectral = forward(field);
    for j in 1..=sobolev_order {
        total += grad_norm_lq_spectral(&spectral, j, q)?;
    }
    Ok(total)
}

/// `L_q` norm of the order-`j` derivative stack of an already transformed field.
pub fn grad_norm_lq_spectral(spectral: &SpectralField, j: usize, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::BadExponent(q));
    }
    let grid = spectral.grid;
    let n = grid.n_points();
    let mut mags = vec![0.0f64; n];
    for alpha in multi_indices(grid.dim, j) {
        let d = spectral_derivative(spectral, &alpha[..grid.dim])?;
        let phys = inverse(&d);
        for c in 0..phys.comps {
            let comp = phys.comp(c);
            for (m, v) in mags.iter_mut().zip(comp.iter()) {
                *m += v * v;
            }
        }
    }
    if q.is_infinite() {
        return Ok(mags.iter().fold(0.0f64, |m, v| m.max(v.sqrt())));
    }
    let dv = grid.cell_volume();
    let sum: f64 = mags.iter().map(|m| m.sqrt().powf(q)).sum();
    Ok((dv * sum).powf(1.0 / q))
}

/// Pointwise magnitude of the order-`j` derivative stack of a real field
/// given spectrally (all components, all multi-indices of order `j`).
pub fn derivative_stack_magnitude(hat: &SpectralField, j: usize) -> Result<Vec<f64>, GridError> {
    if j > 3 {
        return Err(GridError::BadSobolevOrder(j));
    }
    let grid = hat.grid;
    let n = grid.n_points();
    let mut mags = vec![0.0f64; n];
    let indices = if j == 0 { vec![[0usize; 3]] } else { multi_indices(grid.dim, j) };
    for alpha in indices {
        let d = if j == 0 { hat.clone() } else { spectral_derivative(hat, &alpha[..grid.dim])? };
        let phys = inverse(&d);
        for c in 0..phys.comps {
            let comp = phys.comp(c);
            for (m, v) in mags.iter_mut().zip(comp.iter()) {
                *m += v * v;
            }
        }
    }
    for m in mags.iter_mut() {
        *m = m.sqrt();
    }
    Ok(mags)
}

/// Riemann-sum `L_q` norm of a precomputed magnitude field.
pub fn lq_of_magnitude(grid: GridSpec, mags: &[f64], q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::BadExponent(q));
    }
    if q.is_infinite() {
        return Ok(mags.iter().fold(0.0f64, |m, v| m.max(*v)));
    }
    let dv = grid.cell_volume();
    let sum: f64 = mags.iter().map(|m| m.powf(q)).sum();
    Ok((dv * sum).powf(1.0 / q))
}

/// `L_q` norm of the order-`j` derivative stack of a complex-valued field
/// given by its Fourier coefficients (solutions at complex resolvent
/// parameters are genuinely complex; magnitudes keep both parts).
pub fn complex_grad_norm(hat: &SpectralField, j: usize, q: f64) -> Result<f64, GridError> {
    if !(q >= 1.0) {
        return Err(GridError::BadExponent(q));
    }
    let grid = hat.grid;
    let n = grid.n_points();
    let mut mags = vec![0.0f64; n];
    let indices = if j == 0 { vec![[0usize; 3]] } else { multi_indices(grid.dim, j) };
    for alpha in indices {
        let d = if j == 0 { hat.clone() } else { spectral_derivative(hat, &alpha[..grid.dim])? };
        let phys = inverse_complex(&d);
        for c in 0..phys.comps {
            let comp = phys.comp(c);
            for (m, v) in mags.iter_mut().zip(comp.iter()) {
                *m += v.norm_sqr();
            }
        }
    }
    if q.is_infinite() {
        return Ok(mags.iter().fold(0.0f64, |m, v| m.max(v.sqrt())));
    }
    let dv = grid.cell_volume();
    let sum: f64 = mags.iter().map(|m| m.sqrt().powf(q)).sum();
    Ok((dv * sum).powf(1.0 / q))
}

/// Sobolev norm of a complex field from its Fourier coefficients.
pub fn complex_field_norm(hat: &SpectralField, q: f64, sobolev_order: usize) -> Result<f64, GridError> {
    if sobolev_order > 3 {
        return Err(GridError::BadSobolevOrder(sobolev_order));
    }
    let mut total = 0.0;
    for j in 0..=sobolev_order {
        total += complex_grad_norm(hat, j, q)?;
    }
    Ok(total)
}

/// Spectral-side `L_2` norm via Parseval.
pub fn norm_l2_spectral(field: &SpectralField) -> f64 {
    let n = field.grid.n_points() as f64;
    let vol = field.grid.box_length.powi(field.grid.dim as i32);
    let sum: f64 = field.data.iter().map(|v| v.norm_sqr()).sum();
    (vol / (n * n) * sum).sqrt()
}
