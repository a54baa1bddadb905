//! Numerical laboratory for a coupled Q-tensor / Navier-Stokes system on a
//! periodic box: pseudo-spectral discretization, explicit per-mode resolvent
//! calculus, analytic-semigroup contour integration, decay-rate measurement,
//! and exponential-IMEX nonlinear time stepping.

pub mod grid;
pub mod linalg;
pub mod params;
pub mod qtensor;
pub mod resolvent;
pub mod semigroup;
pub mod stepper;

#[cfg(test)]
pub(crate) mod testutil;

pub use grid::{GridSpec, PhysicalField, SpectralField};
pub use params::ModelParams;
