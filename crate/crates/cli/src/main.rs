use anyhow::Result;
use clap::{Parser, Subcommand};
use qtlab::config::{help_text, RunConfig};
use qtlab::experiments::{self, Ctx};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "qtlab",
    about = "Pseudo-spectral laboratory for a coupled tensor / Navier-Stokes system",
    after_help = help_text()
)]
struct Cli {
    /// Configuration file (flat `key = value`); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "qtlab-out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Multiplier symbols vs the dense per-mode oracle, margins, roots.
    Symbols {
        #[command(subcommand)]
        sub: CheckSub,
    },
    /// Sector resolvent-estimate ratio sweeps.
    Resolvent {
        #[command(subcommand)]
        sub: CheckSub,
    },
    /// Contour semigroup vs matrix exponential on sample modes.
    Semigroup {
        #[command(subcommand)]
        sub: CheckSub,
    },
    /// Decay-exponent fit of the full linearized evolution.
    LinearDecay,
    /// Heat evolution of the tensor trace vs the analytic solution.
    HeatTrace,
    /// Nonlinear run with diagnostics, snapshots and the trajectory norm.
    Simulate,
    /// Variation-of-constants quadrature vs direct integration.
    Duhamel {
        #[command(subcommand)]
        sub: CheckSub,
    },
    /// Shifted/compensation recombination identity.
    Split {
        #[command(subcommand)]
        sub: CheckSub,
    },
    /// Weighted trajectory norm and nonlinear product-bound table.
    Norms,
}

#[derive(Subcommand)]
enum CheckSub {
    Check,
}

fn main() {
    let cli = Cli::parse();
    experiments::init_thread_cap();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<String> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = cfg;
    if let Some(seed) = cli.seed {
        cfg.init_seed = seed;
    }
    experiments::write_echo(&cfg, &cli.out)?;
    let ctx = Ctx { cfg: &cfg, out: &cli.out, seed: cfg.init_seed };
    match cli.cmd {
        Cmd::Symbols { sub: CheckSub::Check } => experiments::symbols_check(&ctx),
        Cmd::Resolvent { sub: CheckSub::Check } => experiments::resolvent_check(&ctx),
        Cmd::Semigroup { sub: CheckSub::Check } => experiments::semigroup_check(&ctx),
        Cmd::LinearDecay => experiments::linear_decay(&ctx),
        Cmd::HeatTrace => experiments::heat_trace(&ctx),
        Cmd::Simulate => experiments::simulate(&ctx),
        Cmd::Duhamel { sub: CheckSub::Check } => experiments::duhamel_check(&ctx),
        Cmd::Split { sub: CheckSub::Check } => experiments::split_check(&ctx),
        Cmd::Norms => experiments::norms(&ctx),
    }
}
