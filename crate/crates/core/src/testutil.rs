//! Shared helpers for the crate's test modules.

use crate::grid::{self, GridSpec, PhysicalField, SpectralField};
use crate::qtensor::{QTensorField, VelocityField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Band-limited random real field with a prescribed max amplitude.
pub(crate) fn smooth_field(g: GridSpec, comps: usize, band: usize, seed: u64, amp: f64) -> PhysicalField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.n_points();
    let mut hat = SpectralField::zeros(g, comps);
    for c in 0..comps {
        for p in 0..n {
            let idx = g.decode(p);
            let ok = (0..g.dim).all(|a| g.signed_index(idx[a]).unsigned_abs() as usize <= band);
            if ok {
                hat.data[c * n + p] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
    }
    let mut f = grid::inverse(&hat);
    let scale = amp / f.max_abs().max(1e-300);
    for v in f.data.iter_mut() {
        *v *= scale;
    }
    f
}

/// Random admissible state: projected velocity and Q-tensor fields.
pub(crate) fn random_state(g: GridSpec, seed: u64, amp: f64) -> (VelocityField, QTensorField) {
    let u = VelocityField::project(smooth_field(g, g.dim, g.points_per_dim / 4, seed, amp)).unwrap();
    let q = QTensorField::project(smooth_field(g, g.dim * g.dim, g.points_per_dim / 4, seed + 1, amp))
        .unwrap();
    (u, q)
}
