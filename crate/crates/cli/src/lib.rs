//! Batch front end: flat-file configuration, binary snapshots, CSV
//! diagnostics, SVG plots, seeded initial data, and the experiment drivers
//! behind the `qtlab` subcommands.

pub mod config;
pub mod diagnostics;
pub mod experiments;
pub mod initdata;
pub mod plot;
pub mod snapshot;
