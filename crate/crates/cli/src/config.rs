//! Flat `key = value` run configuration with a fixed schema: every key is
//! validated against its documented range, unknown keys are rejected with
//! their line number, and the effective configuration can be echoed back in
//! a form that reloads identically.

use qtlab_core::grid::GridSpec;
use qtlab_core::params::ModelParams;
use qtlab_core::stepper::{Scheme, SchemeConfig};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: malformed entry `{text}` (expected `key = value`)")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("key `{key}`: {reason}")]
    Inconsistent { key: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Value that may be left to the library to choose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto {
    Auto,
    Given(f64),
}

impl Auto {
    pub fn or(&self, fallback: f64) -> f64 {
        match self {
            Auto::Auto => fallback,
            Auto::Given(v) => *v,
        }
    }
}

/// The full run configuration; one struct for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid_dim: usize,
    pub grid_m: usize,
    pub grid_length: f64,

    pub model_a: f64,
    pub model_b: f64,
    pub model_c: f64,
    pub model_xi_a: f64,
    pub model_lambda1: f64,
    pub model_literal_fprime: bool,

    pub scheme_dt: f64,
    pub scheme_kind: Scheme,
    pub scheme_dealias: bool,
    pub scheme_nonlinear: bool,
    pub scheme_velocity_frozen: bool,

    pub run_t_end: f64,
    pub run_observe_every: usize,
    pub run_snapshot_every: usize,

    pub sector_sigma: Auto,
    pub sector_lambda0: Auto,
    pub path_a0: f64,
    pub quad_nodes: usize,
    pub quad_threshold: f64,

    pub norms_sigma_hat: f64,
    pub norms_q2: Auto,
    pub norms_max_record_steps: usize,

    pub init_kind: InitKind,
    pub init_epsilon: f64,
    pub init_band: usize,
    pub init_seed: u64,

    pub check_samples: usize,
    pub decay_samples: usize,
    pub decay_t_min: f64,
    pub decay_t_max: Auto,
    pub duhamel_steps: usize,
    pub duhamel_dt: f64,
    pub split_steps: usize,
    pub split_dt: f64,
    pub split_lambda1_values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Bumps,
    Noise,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_dim: 2,
            grid_m: 64,
            grid_length: 2.0 * std::f64::consts::PI,
            model_a: 1.0,
            model_b: 0.0,
            model_c: 1.0,
            model_xi_a: 0.5,
            model_lambda1: 1.0,
            model_literal_fprime: false,
            scheme_dt: 0.01,
            scheme_kind: Scheme::Etdrk2,
            scheme_dealias: true,
            scheme_nonlinear: true,
            scheme_velocity_frozen: false,
            run_t_end: 1.0,
            run_observe_every: 10,
            run_snapshot_every: 0,
            sector_sigma: Auto::Auto,
            sector_lambda0: Auto::Auto,
            path_a0: 0.1,
            quad_nodes: 32,
            quad_threshold: 1e-16,
            norms_sigma_hat: 0.25,
            norms_q2: Auto::Auto,
            norms_max_record_steps: 400,
            init_kind: InitKind::Noise,
            init_epsilon: 1e-3,
            init_band: 8,
            init_seed: 42,
            check_samples: 200,
            decay_samples: 24,
            decay_t_min: 1.0,
            decay_t_max: Auto::Auto,
            duhamel_steps: 500,
            duhamel_dt: 2e-3,
            split_steps: 500,
            split_dt: 1e-3,
            split_lambda1_values: vec![1.0, 4.0],
        }
    }
}

/// `(key, default, doc)` rows for `--help` and the README.
pub const KEY_TABLE: &[(&str, &str, &str)] = &[
    ("grid.dim", "2", "spatial dimension, 2 or 3"),
    ("grid.M", "64", "points per axis, power of two >= 8"),
    ("grid.length", "6.283185307179586", "box length L > 0"),
    ("model.a", "1.0", "bulk coefficient a > 0"),
    ("model.b", "0.0", "bulk coefficient b"),
    ("model.c", "1.0", "bulk coefficient c > 0"),
    ("model.xi_a", "0.5", "tumbling parameter (coupling beta = 2 xi_a / dim)"),
    ("model.lambda1", "1.0", "time shift of the splitting, >= 0"),
    ("model.literal_fprime", "false", "use the literal-text bulk terms in f, g"),
    ("scheme.dt", "0.01", "time step > 0"),
    ("scheme.kind", "etdrk2", "integrator: etd1 or etdrk2"),
    ("scheme.dealias", "true", "two-thirds-rule dealiasing"),
    ("scheme.nonlinear", "true", "include the nonlinear forcing"),
    ("scheme.velocity_frozen", "false", "pin u = 0 and run the tensor gradient flow"),
    ("run.t_end", "1.0", "final time > 0"),
    ("run.observe_every", "10", "observer cadence in steps, >= 1"),
    ("run.snapshot_every", "0", "snapshot cadence in steps, 0 disables"),
    ("sector.sigma", "auto", "sector angle in (sigma0, pi/2), or auto"),
    ("sector.lambda0", "auto", "sector radius >= 1, or auto (calibrated)"),
    ("path.a0", "0.1", "low/high frequency split radius in (0, 1)"),
    ("quad.nodes", "32", "Gauss-Legendre nodes per segment, >= 16"),
    ("quad.threshold", "1e-16", "ray truncation threshold, <= 1e-14"),
    ("norms.sigma_hat", "0.25", "exponent offset in (0, 0.5]"),
    ("norms.q2", "auto", "high integrability exponent > dim, or auto"),
    ("norms.max_record_steps", "400", "cap on recorded steps for bound checks"),
    ("init.kind", "noise", "initial data: bumps or noise"),
    ("init.epsilon", "1e-3", "amplitude; the reported data norm equals epsilon^2"),
    ("init.band", "8", "spectral band of the initial data, >= 1"),
    ("init.seed", "42", "RNG seed (overridden by --seed)"),
    ("check.samples", "200", "sample count for symbol/resolvent checks, >= 1"),
    ("decay.samples", "24", "output times for decay experiments, >= 8"),
    ("decay.t_min", "1.0", "fit window start > 0"),
    ("decay.t_max", "auto", "fit window end, or auto (wraparound-limited)"),
    ("duhamel.steps", "500", "steps of the recorded run, >= 4"),
    ("duhamel.dt", "2e-3", "step size of the splitting/quadrature runs, > 0"),
    ("split.steps", "500", "steps of the splitting runs, >= 2"),
    ("split.dt", "1e-3", "step size of the split-check runs, > 0"),
    ("split.lambda1_values", "1,4", "comma-separated shifts for split checks"),
];

pub fn help_text() -> String {
    let mut s = String::from("Configuration keys (flat `key = value` file; `#` comments):\n");
    for (key, default, doc) in KEY_TABLE {
        let _ = writeln!(s, "  {key:<24} default {default:<22} {doc}");
    }
    s
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.into(),
        reason: format!("`{v}` is not a number"),
    })
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.into(),
        reason: format!("`{v}` is not a nonnegative integer"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.into(),
            reason: format!("`{v}` is not true/false"),
        }),
    }
}

fn parse_auto(line: usize, key: &str, v: &str) -> Result<Auto, ConfigError> {
    if v == "auto" {
        Ok(Auto::Auto)
    } else {
        Ok(Auto::Given(parse_f64(line, key, v)?))
    }
}

fn bad(line: usize, key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { line, key: key.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Malformed { line, text: raw.trim().into() });
            };
            let key = key.trim();
            let v = value.trim();
            cfg.apply(line, key, v)?;
        }
        cfg.validate_cross()?;
        Ok(cfg)
    }

    fn apply(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "grid.dim" => {
                let d = parse_usize(line, key, v)?;
                if !(d == 2 || d == 3) {
                    return Err(bad(line, key, "dimension must be 2 or 3"));
                }
                self.grid_dim = d;
            }
            "grid.M" => {
                let m = parse_usize(line, key, v)?;
                if m < 8 || !m.is_power_of_two() {
                    return Err(bad(line, key, "points per axis must be a power of two >= 8"));
                }
                self.grid_m = m;
            }
            "grid.length" => {
                let l = parse_f64(line, key, v)?;
                if !(l > 0.0) {
                    return Err(bad(line, key, "box length must be positive"));
                }
                self.grid_length = l;
            }
            "model.a" => {
                let a = parse_f64(line, key, v)?;
                if !(a > 0.0) {
                    return Err(bad(line, key, "coefficients a and c must be positive"));
                }
                self.model_a = a;
            }
            "model.b" => self.model_b = parse_f64(line, key, v)?,
            "model.c" => {
                let c = parse_f64(line, key, v)?;
                if !(c > 0.0) {
                    return Err(bad(line, key, "coefficients a and c must be positive"));
                }
                self.model_c = c;
            }
            "model.xi_a" => self.model_xi_a = parse_f64(line, key, v)?,
            "model.lambda1" => {
                let l = parse_f64(line, key, v)?;
                if !(l >= 0.0) {
                    return Err(bad(line, key, "time shift must be >= 0"));
                }
                self.model_lambda1 = l;
            }
            "model.literal_fprime" => self.model_literal_fprime = parse_bool(line, key, v)?,
            "scheme.dt" => {
                let dt = parse_f64(line, key, v)?;
                if !(dt > 0.0) {
                    return Err(bad(line, key, "time step must be positive"));
                }
                self.scheme_dt = dt;
            }
            "scheme.kind" => {
                self.scheme_kind = match v {
                    "etd1" => Scheme::Etd1,
                    "etdrk2" => Scheme::Etdrk2,
                    _ => return Err(bad(line, key, "scheme must be etd1 or etdrk2")),
                }
            }
            "scheme.dealias" => self.scheme_dealias = parse_bool(line, key, v)?,
            "scheme.nonlinear" => self.scheme_nonlinear = parse_bool(line, key, v)?,
            "scheme.velocity_frozen" => self.scheme_velocity_frozen = parse_bool(line, key, v)?,
            "run.t_end" => {
                let t = parse_f64(line, key, v)?;
                if !(t > 0.0) {
                    return Err(bad(line, key, "final time must be positive"));
                }
                self.run_t_end = t;
            }
            "run.observe_every" => {
                let n = parse_usize(line, key, v)?;
                if n == 0 {
                    return Err(bad(line, key, "observer cadence must be >= 1"));
                }
                self.run_observe_every = n;
            }
            "run.snapshot_every" => self.run_snapshot_every = parse_usize(line, key, v)?,
            "sector.sigma" => self.sector_sigma = parse_auto(line, key, v)?,
            "sector.lambda0" => {
                let a = parse_auto(line, key, v)?;
                if let Auto::Given(x) = a {
                    if !(x >= 1.0) {
                        return Err(bad(line, key, "sector radius must be >= 1"));
                    }
                }
                self.sector_lambda0 = a;
            }
            "path.a0" => {
                let a0 = parse_f64(line, key, v)?;
                if !(a0 > 0.0 && a0 < 1.0) {
                    return Err(bad(line, key, "split radius must lie in (0, 1)"));
                }
                self.path_a0 = a0;
            }
            "quad.nodes" => {
                let n = parse_usize(line, key, v)?;
                if n < 16 {
                    return Err(bad(line, key, "need at least 16 nodes per segment"));
                }
                self.quad_nodes = n;
            }
            "quad.threshold" => {
                let t = parse_f64(line, key, v)?;
                if !(t > 0.0 && t <= 1e-14) {
                    return Err(bad(line, key, "threshold must lie in (0, 1e-14]"));
                }
                self.quad_threshold = t;
            }
            "norms.sigma_hat" => {
                let s = parse_f64(line, key, v)?;
                if !(s > 0.0 && s <= 0.5) {
                    return Err(bad(line, key, "sigma_hat must lie in (0, 0.5]"));
                }
                self.norms_sigma_hat = s;
            }
            "norms.q2" => self.norms_q2 = parse_auto(line, key, v)?,
            "norms.max_record_steps" => {
                let n = parse_usize(line, key, v)?;
                if n < 4 {
                    return Err(bad(line, key, "need at least 4 recorded steps"));
                }
                self.norms_max_record_steps = n;
            }
            "init.kind" => {
                self.init_kind = match v {
                    "bumps" => InitKind::Bumps,
                    "noise" => InitKind::Noise,
                    _ => return Err(bad(line, key, "initial data kind must be bumps or noise")),
                }
            }
            "init.epsilon" => {
                let e = parse_f64(line, key, v)?;
                if !(e > 0.0) {
                    return Err(bad(line, key, "amplitude must be positive"));
                }
                self.init_epsilon = e;
            }
            "init.band" => {
                let b = parse_usize(line, key, v)?;
                if b == 0 {
                    return Err(bad(line, key, "band must be >= 1"));
                }
                self.init_band = b;
            }
            "init.seed" => {
                self.init_seed = v.parse::<u64>().map_err(|_| {
                    bad(line, key, format!("`{v}` is not a nonnegative integer"))
                })?;
            }
            "check.samples" => {
                let n = parse_usize(line, key, v)?;
                if n == 0 {
                    return Err(bad(line, key, "need at least one sample"));
                }
                self.check_samples = n;
            }
            "decay.samples" => {
                let n = parse_usize(line, key, v)?;
                if n < 8 {
                    return Err(bad(line, key, "need at least 8 output times"));
                }
                self.decay_samples = n;
            }
            "decay.t_min" => {
                let t = parse_f64(line, key, v)?;
                if !(t > 0.0) {
                    return Err(bad(line, key, "fit window start must be positive"));
                }
                self.decay_t_min = t;
            }
            "decay.t_max" => self.decay_t_max = parse_auto(line, key, v)?,
            "duhamel.steps" => {
                let n = parse_usize(line, key, v)?;
                if n < 4 {
                    return Err(bad(line, key, "need at least 4 steps"));
                }
                self.duhamel_steps = n;
            }
            "duhamel.dt" => {
                let dt = parse_f64(line, key, v)?;
                if !(dt > 0.0) {
                    return Err(bad(line, key, "step size must be positive"));
                }
                self.duhamel_dt = dt;
            }
            "split.dt" => {
                let dt = parse_f64(line, key, v)?;
                if !(dt > 0.0) {
                    return Err(bad(line, key, "step size must be positive"));
                }
                self.split_dt = dt;
            }
            "split.steps" => {
                let n = parse_usize(line, key, v)?;
                if n < 2 {
                    return Err(bad(line, key, "need at least 2 steps"));
                }
                self.split_steps = n;
            }
            "split.lambda1_values" => {
                let mut vals = Vec::new();
                for part in v.split(',') {
                    let x = parse_f64(line, key, part.trim())?;
                    if !(x >= 0.0) {
                        return Err(bad(line, key, "shifts must be >= 0"));
                    }
                    vals.push(x);
                }
                if vals.is_empty() {
                    return Err(bad(line, key, "need at least one shift"));
                }
                self.split_lambda1_values = vals;
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    fn validate_cross(&self) -> Result<(), ConfigError> {
        if let Auto::Given(q2) = self.norms_q2 {
            if !(q2 > self.grid_dim as f64) {
                return Err(ConfigError::Inconsistent {
                    key: "norms.q2".into(),
                    reason: format!("must exceed the dimension {}", self.grid_dim),
                });
            }
        }
        if let Auto::Given(t) = self.decay_t_max {
            if !(t > self.decay_t_min) {
                return Err(ConfigError::Inconsistent {
                    key: "decay.t_max".into(),
                    reason: "must exceed decay.t_min".into(),
                });
            }
        }
        Ok(())
    }

    /// Effective configuration in reloadable form, keys sorted.
    pub fn echo(&self) -> String {
        let auto = |a: &Auto| match a {
            Auto::Auto => "auto".to_string(),
            Auto::Given(v) => format!("{v:.17e}"),
        };
        let mut rows = vec![
            ("grid.dim", self.grid_dim.to_string()),
            ("grid.M", self.grid_m.to_string()),
            ("grid.length", format!("{:.17e}", self.grid_length)),
            ("model.a", format!("{:.17e}", self.model_a)),
            ("model.b", format!("{:.17e}", self.model_b)),
            ("model.c", format!("{:.17e}", self.model_c)),
            ("model.xi_a", format!("{:.17e}", self.model_xi_a)),
            ("model.lambda1", format!("{:.17e}", self.model_lambda1)),
            ("model.literal_fprime", self.model_literal_fprime.to_string()),
            ("scheme.dt", format!("{:.17e}", self.scheme_dt)),
            (
                "scheme.kind",
                match self.scheme_kind {
                    Scheme::Etd1 => "etd1".into(),
                    Scheme::Etdrk2 => "etdrk2".to_string(),
                },
            ),
            ("scheme.dealias", self.scheme_dealias.to_string()),
            ("scheme.nonlinear", self.scheme_nonlinear.to_string()),
            ("scheme.velocity_frozen", self.scheme_velocity_frozen.to_string()),
            ("run.t_end", format!("{:.17e}", self.run_t_end)),
            ("run.observe_every", self.run_observe_every.to_string()),
            ("run.snapshot_every", self.run_snapshot_every.to_string()),
            ("sector.sigma", auto(&self.sector_sigma)),
            ("sector.lambda0", auto(&self.sector_lambda0)),
            ("path.a0", format!("{:.17e}", self.path_a0)),
            ("quad.nodes", self.quad_nodes.to_string()),
            ("quad.threshold", format!("{:.17e}", self.quad_threshold)),
            ("norms.sigma_hat", format!("{:.17e}", self.norms_sigma_hat)),
            ("norms.q2", auto(&self.norms_q2)),
            ("norms.max_record_steps", self.norms_max_record_steps.to_string()),
            (
                "init.kind",
                match self.init_kind {
                    InitKind::Bumps => "bumps".into(),
                    InitKind::Noise => "noise".to_string(),
                },
            ),
            ("init.epsilon", format!("{:.17e}", self.init_epsilon)),
            ("init.band", self.init_band.to_string()),
            ("init.seed", self.init_seed.to_string()),
            ("check.samples", self.check_samples.to_string()),
            ("decay.samples", self.decay_samples.to_string()),
            ("decay.t_min", format!("{:.17e}", self.decay_t_min)),
            ("decay.t_max", auto(&self.decay_t_max)),
            ("duhamel.steps", self.duhamel_steps.to_string()),
            ("duhamel.dt", format!("{:.17e}", self.duhamel_dt)),
            ("split.steps", self.split_steps.to_string()),
            ("split.dt", format!("{:.17e}", self.split_dt)),
            (
                "split.lambda1_values",
                self.split_lambda1_values
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    // -- typed views -------------------------------------------------------

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.grid_dim, self.grid_m, self.grid_length)
            .expect("grid keys are validated on parse")
    }

    pub fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(self.model_a, self.model_b, self.model_c, self.model_xi_a, self.grid_dim)
            .expect("model keys are validated on parse")
            .with_lambda1(self.model_lambda1)
            .expect("lambda1 validated on parse");
        p.paper_literal_fprime = self.model_literal_fprime;
        p
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            dt: self.scheme_dt,
            scheme: self.scheme_kind,
            dealias: self.scheme_dealias,
            lambda1: self.model_lambda1,
            include_nonlinear: self.scheme_nonlinear,
            velocity_frozen: self.scheme_velocity_frozen,
        }
    }
}
