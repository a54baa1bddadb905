//! Drivers behind the CLI subcommands.  Each returns a one-line summary on
//! success; threshold violations come back as errors so the process exits
//! nonzero with a single reason line.

use crate::config::{Auto, RunConfig};
use crate::diagnostics::write_diagnostics;
use crate::initdata::generate_initial_data;
use crate::plot::{emit_plot, Guide, PlotKind};
use crate::snapshot::save_snapshot;
use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use qtlab_core::grid::{self, PhysicalField, SpectralField};
use qtlab_core::params::ModelParams;
use qtlab_core::qtensor::symmetry_defects;
use qtlab_core::resolvent::{
    dense_resolvent_oracle, margin_infimum, p2_roots, resolvent_apply_mode,
    resolvent_estimate_ratio, residual_defect, symbol_sum_mode, SectorParams,
};
use qtlab_core::semigroup::{
    contour_semigroup_apply, decay_fit, evolve_linear_field, heat_trace_propagate,
    mode_exponential, theoretical_rate, transverse_basis, PathParams, PathSet, QuadratureSpec,
};
use qtlab_core::stepper::{
    duhamel_solve, nonlinear_bound_check, run_recording, run_simulation, shifted_split_run,
    state_time_derivative, NormExponents, NormTracker, SimState, Stepper,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub seed: u64,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> std::path::PathBuf {
        self.out.join(name)
    }

    fn sector(&self, params: &ModelParams) -> Result<SectorParams> {
        let auto = SectorParams::default_for(params);
        let sigma = self.cfg.sector_sigma.or(auto.sigma);
        let lambda0 = self.cfg.sector_lambda0.or(auto.lambda0);
        SectorParams::new(params.beta, sigma, lambda0).map_err(|e| anyhow!(e))
    }

    fn quad(&self) -> Result<QuadratureSpec> {
        QuadratureSpec::new(self.cfg.quad_nodes, self.cfg.quad_threshold).map_err(|e| anyhow!(e))
    }

    fn exponents(&self) -> Result<NormExponents> {
        let q2 = match self.cfg.norms_q2 {
            Auto::Auto => None,
            Auto::Given(v) => Some(v),
        };
        NormExponents::new(self.cfg.grid_dim, self.cfg.norms_sigma_hat, q2).map_err(|e| anyhow!(e))
    }
}

fn random_mode_datum(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<Complex64>, Vec<Complex64>) {
    let f: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let mut g = vec![Complex64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            g[i * dim + j] = v;
            g[j * dim + i] = v;
        }
    }
    (f, g)
}

fn constrained_mode_datum(
    dim: usize,
    xi: &[f64],
    rng: &mut ChaCha8Rng,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let (mut f, g) = random_mode_datum(dim, rng);
    let basis = transverse_basis(xi, dim);
    let mut proj = vec![Complex64::new(0.0, 0.0); dim];
    for e in &basis {
        let coeff: Complex64 = (0..dim).map(|a| f[a] * e[a]).sum();
        for a in 0..dim {
            proj[a] += coeff * e[a];
        }
    }
    f = proj;
    (f, g)
}

// -- symbols check -----------------------------------------------------------

pub fn symbols_check(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let sector = ctx.sector(&params)?;

    // Margin lattice.
    let (infimum, samples) = margin_infimum(&params, sector.sigma, sector.lambda0, 16);
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| vec![s.xi_mag, s.lambda_mag, s.lambda_arg, s.margin])
        .collect();
    write_diagnostics(&["xi_mag", "lambda_mag", "lambda_arg", "margin"], &rows, &ctx.path("margins.csv"))?;

    // Symbol route vs dense oracle on random sector samples.
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut check_rows = Vec::new();
    let mut max_err = 0.0f64;
    let mut max_res = 0.0f64;
    for _ in 0..cfg.check_samples {
        let dim = params.dim;
        let xi: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (f, g) = random_mode_datum(dim, &mut rng);
        let mut r = || rng.gen_range(0.0..1.0);
        let lam = sector.sample(1, 3.0, &mut r)[0];
        let (u1, q1, p) = resolvent_apply_mode(lam, &xi, &f, &g, &params);
        let (u2, q2) = symbol_sum_mode(lam, &xi, &f, &g, &params).map_err(|e| anyhow!(e))?;
        let (u3, q3, _) = dense_resolvent_oracle(lam, &xi, &f, &g, &params).map_err(|e| anyhow!(e))?;
        let scale = u1.iter().chain(q1.iter()).map(|v| v.norm()).fold(0.0f64, f64::max).max(1e-300);
        let mut err = 0.0f64;
        for j in 0..dim {
            err = err.max((u1[j] - u2[j]).norm()).max((u1[j] - u3[j]).norm());
        }
        for c in 0..dim * dim {
            err = err.max((q1[c] - q2[c]).norm()).max((q1[c] - q3[c]).norm());
        }
        let rel = err / scale;
        let res = residual_defect(lam, &xi, &f, &g, &params, &u1, &q1, p);
        max_err = max_err.max(rel);
        max_res = max_res.max(res);
        let xi_mag = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        check_rows.push(vec![xi_mag, lam.norm(), lam.arg(), rel, res]);
    }
    write_diagnostics(
        &["xi_mag", "lambda_mag", "lambda_arg", "rel_err_vs_oracle", "residual"],
        &check_rows,
        &ctx.path("symbols_check.csv"),
    )?;

    // Root geometry along |xi|.
    let mut root_rows = Vec::new();
    let mut fitpts = Vec::new();
    for i in 0..40 {
        let xi_mag = 10f64.powf(-3.0 + 6.0 * i as f64 / 39.0);
        let (lp, lm) = p2_roots(xi_mag, &params);
        root_rows.push(vec![xi_mag, lp.re, lp.im, lm.re, lm.im]);
        if xi_mag <= 0.1 {
            let dev = (lp + Complex64::new(xi_mag * xi_mag, 0.0)).norm();
            if dev > 0.0 {
                fitpts.push((xi_mag.ln(), dev.ln()));
            }
        }
    }
    write_diagnostics(
        &["xi_mag", "lam_plus_re", "lam_plus_im", "lam_minus_re", "lam_minus_im"],
        &root_rows,
        &ctx.path("roots.csv"),
    )?;
    let slope = if params.beta != 0.0 && fitpts.len() >= 2 {
        let n = fitpts.len() as f64;
        let mx = fitpts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fitpts.iter().map(|p| p.1).sum::<f64>() / n;
        fitpts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / fitpts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>()
    } else {
        f64::NAN
    };

    if max_err > 1e-10 {
        bail!("symbols check failed: symbol/oracle rel err {max_err:.3e} exceeds 1e-10");
    }
    if max_res > 1e-9 {
        bail!("symbols check failed: residual {max_res:.3e} exceeds 1e-9");
    }
    Ok(format!(
        "symbols check: {} samples, max rel err {:.3e}, max residual {:.3e}, margin infimum {:.3e} (sigma {:.4}, lambda0 {}), small-xi root slope {:.3}",
        cfg.check_samples, max_err, max_res, infimum, sector.sigma, sector.lambda0, slope
    ))
}

// -- resolvent check -----------------------------------------------------------

pub fn resolvent_check(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let sector = ctx.sector(&params)?;
    let grid_spec = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);

    // Fixed random data.
    let n = grid_spec.n_points();
    let mut f = SpectralField::zeros(grid_spec, grid_spec.dim);
    let mut g = SpectralField::zeros(grid_spec, grid_spec.dim * grid_spec.dim);
    for p in 0..n {
        let idx = grid_spec.decode(p);
        let ok = (0..grid_spec.dim)
            .all(|a| grid_spec.signed_index(idx[a]).unsigned_abs() as usize <= cfg.init_band);
        if !ok {
            continue;
        }
        for c in 0..f.comps {
            f.data[c * n + p] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        for c in 0..g.comps {
            g.data[c * n + p] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }

    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let n_pts = 25usize;
    for i in 0..n_pts {
        let lam_mag = sector.lambda0 * 10f64.powf(3.0 * i as f64 / (n_pts - 1) as f64);
        for arg in [0.0, 0.98 * (std::f64::consts::PI - sector.sigma)] {
            let lam = Complex64::from_polar(lam_mag, arg);
            let ratio = resolvent_estimate_ratio(lam, &f, &g, &params, &sector, 2.0)
                .map_err(|e| anyhow!(e))?;
            rows.push(vec![lam_mag, arg, ratio]);
            ratios.push(ratio);
        }
    }
    write_diagnostics(&["lambda_mag", "lambda_arg", "ratio"], &rows, &ctx.path("resolvent_check.csv"))?;
    let max = ratios.iter().fold(0.0f64, |m, &v| m.max(v));
    let min = ratios.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max / min < 50.0) {
        bail!("resolvent check failed: ratio spread {:.2} exceeds 50", max / min);
    }
    Ok(format!(
        "resolvent check: {} sector points over 3 decades, ratio in [{:.3e}, {:.3e}], spread {:.2}",
        rows.len(),
        min,
        max,
        max / min
    ))
}

// -- semigroup check -----------------------------------------------------------

pub fn semigroup_check(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let sector = ctx.sector(&params)?;
    let pp = PathParams::derive(&params, &sector, cfg.path_a0).map_err(|e| anyhow!(e))?;
    let quad = ctx.quad()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let dim = params.dim;

    let mut modes: Vec<Vec<f64>> = Vec::new();
    let unit = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    for _ in 0..5 {
        let d = unit(&mut rng);
        let mag = rng.gen_range(0.05..0.9) * pp.a0 / 3.0;
        modes.push(d.iter().map(|v| v * mag).collect());
    }
    for _ in 0..10 {
        let d = unit(&mut rng);
        let mag = rng.gen_range(0.4 * pp.a0..1.2);
        modes.push(d.iter().map(|v| v * mag).collect());
    }
    for _ in 0..10 {
        let d = unit(&mut rng);
        let mag = rng.gen_range(0.05..2.0f64);
        modes.push(d.iter().map(|v| v * mag).collect());
    }

    let mut rows = Vec::new();
    let mut max_err = 0.0f64;
    for xi in &modes {
        let xi_mag = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (f, g) = constrained_mode_datum(dim, xi, &mut rng);
        for t in [0.5, 1.0, 2.0] {
            let e = mode_exponential(xi, t, &params).map_err(|e| anyhow!(e))?;
            let mut v = qtlab_core::linalg::CVec::zeros(dim + dim * dim);
            for j in 0..dim {
                v[j] = f[j];
            }
            for c in 0..dim * dim {
                v[dim + c] = g[c];
            }
            let reference = &e * &v;
            let scale = reference.iter().map(|x| x.norm()).fold(0.0f64, f64::max).max(
                1e-3 * f.iter().chain(g.iter()).map(|x| x.norm()).fold(0.0f64, f64::max),
            );
            let mut paths = vec![(PathSet::Sector, 0.0f64)];
            if xi_mag < 2.0 * pp.a0 / 3.0 {
                paths.push((PathSet::LowFreq, 1.0));
            }
            if xi_mag > pp.a0 / 3.0 {
                paths.push((PathSet::HighFreq, 2.0));
            }
            for (path, pid) in paths {
                let (u, q) = contour_semigroup_apply(path, t, &f, &g, xi, &params, &pp, &quad)
                    .map_err(|e| anyhow!(e))?;
                let mut err = 0.0f64;
                for j in 0..dim {
                    err = err.max((u[j] - reference[j]).norm());
                }
                for c in 0..dim * dim {
                    err = err.max((q[c] - reference[dim + c]).norm());
                }
                let rel = err / scale;
                max_err = max_err.max(rel);
                rows.push(vec![xi_mag, t, pid, rel]);
            }
        }
    }
    write_diagnostics(
        &["xi_mag", "t", "path_id", "rel_err"],
        &rows,
        &ctx.path("semigroup_check.csv"),
    )?;
    if max_err > 1e-6 {
        bail!("semigroup check failed: contour vs exponential rel err {max_err:.3e} exceeds 1e-6");
    }
    Ok(format!(
        "semigroup check: {} mode/path/time combinations, max contour-vs-exponential rel err {:.3e}",
        rows.len(),
        max_err
    ))
}

// -- linear decay ---------------------------------------------------------------

/// Concentrated divergence-free velocity bump with the mean mode removed.
fn concentrated_velocity(grid_spec: qtlab_core::grid::GridSpec, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();
    let l = grid_spec.box_length;
    let w = (l / 200.0).max(3.0 * grid_spec.spacing());
    let c = l / 2.0;
    let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..1.0)).collect();
    let mut field = PhysicalField::zeros(grid_spec, dim);
    for p in 0..n {
        let x = grid_spec.coords(p);
        let mut r2 = 0.0;
        for axis in 0..dim {
            let mut d = (x[axis] - c).abs();
            if d > l / 2.0 {
                d = l - d;
            }
            r2 += d * d;
        }
        let bump = (-r2 / (2.0 * w * w)).exp();
        for (j, dj) in dir.iter().enumerate() {
            field.data[j * n + p] = dj * bump;
        }
    }
    let mut hat = grid::leray_project(&grid::forward(&field)).expect("vector field");
    // Remove the mean so the sup norm decays instead of flooring out.
    for c in 0..dim {
        hat.data[c * n] = Complex64::new(0.0, 0.0);
    }
    hat
}

pub fn linear_decay(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let grid_spec = cfg.grid();
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();

    // Startup check of the low-frequency geometry: the connecting-segment
    // bound must stay controlled on |xi| < a0.
    let sector = ctx.sector(&params)?;
    let pp = PathParams::derive(&params, &sector, cfg.path_a0).map_err(|e| anyhow!(e))?;
    for i in 0..16 {
        let xi = pp.a0 * i as f64 / 16.0;
        let v = pp.a0_condition_value(xi);
        if !(v > 0.0 && v.is_finite()) {
            bail!("split-radius condition fails at |xi| = {xi:.4}: value {v}; lower path.a0");
        }
    }

    let u0 = concentrated_velocity(grid_spec, ctx.seed);
    let q0 = SpectralField::zeros(grid_spec, dim * dim);

    // Fit window: below both the wraparound time and the timescale where the
    // discrete mode sum departs from the whole-space integral.
    let xi_min = 2.0 * std::f64::consts::PI / grid_spec.box_length;
    let t_max = cfg
        .decay_t_max
        .or((0.2 * grid_spec.wraparound_time()).min(0.15 / (xi_min * xi_min)));
    let t_min = cfg.decay_t_min;
    if !(t_max > t_min) {
        bail!("decay window ({t_min}, {t_max}) empty; enlarge the box or lower decay.t_min");
    }
    let t_lo = (0.2 * t_min).max(1e-2);
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for i in 0..cfg.decay_samples {
        let t = t_lo * (t_max / t_lo).powf(i as f64 / (cfg.decay_samples - 1) as f64);
        let (ut, qt) = evolve_linear_field(&u0, &q0, t, &params);
        let u_phys = grid::inverse(&ut);
        let linf = grid::norm_lq(&u_phys, f64::INFINITY).map_err(|e| anyhow!(e))?;
        let l2 = grid::norm_lq(&u_phys, 2.0).map_err(|e| anyhow!(e))?;
        let q_phys = grid::inverse(&qt);
        let linf_q = grid::norm_lq(&q_phys, f64::INFINITY).map_err(|e| anyhow!(e))?;
        rows.push(vec![t, linf, l2, linf_q]);
        series.push((t, linf));
    }
    let _ = n;
    write_diagnostics(&["t", "linf_u", "l2_u", "linf_q"], &rows, &ctx.path("linear_decay.csv"))?;

    let rate = theoretical_rate(f64::INFINITY, 1.0, 0, 0, dim).map_err(|e| anyhow!(e))?;
    let report = decay_fit(&series, (t_min, t_max), Some(rate.exponent)).map_err(|e| anyhow!(e))?;
    emit_plot(
        &series,
        PlotKind::LogLog,
        &[Guide { slope: -rate.exponent, label: format!("reference slope -{:.2}", rate.exponent) }],
        "linearized sup-norm decay of u",
        &ctx.path("linear_decay.svg"),
    )?;
    let dev = report.relative_deviation.unwrap_or(f64::NAN);
    let line = format!(
        "linear decay: fitted exponent {:.4} +- {:.4} vs theoretical {:.4} (deviation {:.1}%), window ({:.1}, {:.1}), wraparound {:.1}",
        report.fitted_exponent,
        report.stderr,
        -rate.exponent,
        100.0 * dev,
        t_min,
        t_max,
        grid_spec.wraparound_time()
    );
    if dev > 0.10 {
        bail!("linear decay failed: {line}");
    }
    Ok(line)
}

// -- heat trace -------------------------------------------------------------------

pub fn heat_trace(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let grid_spec = cfg.grid();
    let dim = grid_spec.dim;
    let n = grid_spec.n_points();
    let l = grid_spec.box_length;
    let s0 = (l / 200.0).max(3.0 * grid_spec.spacing());
    let c = l / 2.0;
    let mut data = vec![0.0; n];
    for p in 0..n {
        let x = grid_spec.coords(p);
        let mut r2 = 0.0;
        for axis in 0..dim {
            let mut d = (x[axis] - c).abs();
            if d > l / 2.0 {
                d = l - d;
            }
            r2 += d * d;
        }
        data[p] = (-r2 / (2.0 * s0 * s0)).exp();
    }
    let d0 = grid::forward(&PhysicalField::from_data(grid_spec, 1, data).unwrap());

    // Analytic-solution checks at times where periodic images stay below the
    // target accuracy.
    // Images reach the worst comparison point (the box edge, distance L/2)
    // at relative size exp(-(L/2)^2 / (2 (s0^2 + 2t))).
    let image_safe_t = ((0.5 * l) * (0.5 * l) / (2.0 * (1e9f64).ln()) - s0 * s0) / 2.0;
    let check_times: Vec<f64> =
        [1.0, 10.0, 50.0, 100.0].iter().copied().filter(|t| *t < image_safe_t).collect();
    let mut max_rel = 0.0f64;
    for &t in &check_times {
        let dt = grid::inverse(&heat_trace_propagate(&d0, t));
        let s2 = s0 * s0 + 2.0 * t;
        let amp = (s0 * s0 / s2).powf(dim as f64 / 2.0);
        let mut worst = 0.0f64;
        for p in 0..n {
            let x = grid_spec.coords(p);
            let mut r2 = 0.0;
            for axis in 0..dim {
                let mut d = (x[axis] - c).abs();
                if d > l / 2.0 {
                    d = l - d;
                }
                r2 += d * d;
            }
            let exact = amp * (-r2 / (2.0 * s2)).exp();
            worst = worst.max((dt.data[p] - exact).abs());
        }
        max_rel = max_rel.max(worst / amp);
    }

    // Sup-norm decay fit.
    let t_max = cfg.decay_t_max.or(0.2 * grid_spec.wraparound_time());
    let t_min = cfg.decay_t_min.max(10.0 * s0 * s0);
    if !(t_max > 10.0 * t_min) {
        bail!(
            "heat-trace fit window ({t_min:.3}, {t_max:.3}) does not span a decade below the wraparound time; enlarge grid.length (and grid.M) or lower decay.t_min"
        );
    }
    let t_lo = (0.2 * t_min).max(1e-2);
    let mut series = Vec::new();
    let mut rows = Vec::new();
    for i in 0..cfg.decay_samples {
        let t = t_lo * (t_max / t_lo).powf(i as f64 / (cfg.decay_samples - 1) as f64);
        let phys = grid::inverse(&heat_trace_propagate(&d0, t));
        let sup = grid::norm_lq(&phys, f64::INFINITY).map_err(|e| anyhow!(e))?;
        series.push((t, sup));
        rows.push(vec![t, sup]);
    }
    write_diagnostics(&["t", "sup_d"], &rows, &ctx.path("heat_trace.csv"))?;
    let target = dim as f64 / 2.0;
    let report = decay_fit(&series, (t_min, t_max), Some(target)).map_err(|e| anyhow!(e))?;
    emit_plot(
        &series,
        PlotKind::LogLog,
        &[Guide { slope: -target, label: format!("reference slope -{target:.1}") }],
        "heat decay of the tensor trace",
        &ctx.path("heat_trace.svg"),
    )?;
    let dev = report.relative_deviation.unwrap_or(f64::NAN);
    let line = format!(
        "heat trace: analytic rel err {:.3e} (before wraparound), fitted sup-norm exponent {:.4} vs -{:.1} (deviation {:.2}%)",
        max_rel, report.fitted_exponent, target, 100.0 * dev
    );
    if max_rel > 1e-8 {
        bail!("heat trace failed: analytic rel err {max_rel:.3e} exceeds 1e-8");
    }
    if dev > 0.05 {
        bail!("heat trace failed: {line}");
    }
    Ok(line)
}

// -- simulate ---------------------------------------------------------------------

pub const SIMULATE_COLUMNS: &[&str] = &[
    "t", "l2_u", "linf_u", "l2_q", "linf_q", "w01_q1", "energy_f", "div_defect", "trace_defect",
    "cfl", "n_norm_partial",
];

pub fn simulate(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let grid_spec = cfg.grid();
    let (u0, q0, init_report) = generate_initial_data(cfg, ctx.seed)?;
    let exps = ctx.exponents()?;
    let stepper = Stepper::new(grid_spec, params, cfg.scheme()).map_err(|e| anyhow!(e))?;
    let state0 = SimState::new(u0, q0);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut tracker = NormTracker::new(exps);
    let mut snap_count = 0usize;
    let out = ctx.out.to_path_buf();
    let snapshot_every = cfg.run_snapshot_every;
    let mut observe_err: Option<anyhow::Error> = None;
    let report = run_simulation(&state0, &stepper, cfg.run_t_end, cfg.run_observe_every, |state| {
        if observe_err.is_some() {
            return;
        }
        let mut record = || -> Result<()> {
            let u_hat = grid::forward(&state.u.0);
            let q_hat = grid::forward(&state.q.0);
            let (dtu, dtq) = state_time_derivative(&u_hat, &q_hat, &params, cfg.scheme_dealias);
            tracker.update(state.t, &u_hat, &q_hat, &dtu, &dtq).map_err(|e| anyhow!(e))?;
            let l2_u = grid::norm_lq(&state.u.0, 2.0).map_err(|e| anyhow!(e))?;
            let linf_u = grid::norm_lq(&state.u.0, f64::INFINITY).map_err(|e| anyhow!(e))?;
            let l2_q = grid::norm_lq(&state.q.0, 2.0).map_err(|e| anyhow!(e))?;
            let linf_q = grid::norm_lq(&state.q.0, f64::INFINITY).map_err(|e| anyhow!(e))?;
            let s = tracker.samples.last().unwrap();
            let (_, energy) = qtlab_core::qtensor::bulk_energy(&state.q, &params);
            let div = grid::divergence_defect(&u_hat);
            let (_, tr) = symmetry_defects(&state.q.0);
            let trace_rel = tr / state.q.0.max_abs().max(1e-300);
            let cfl = cfg.scheme_dt * linf_u / grid_spec.spacing();
            rows.push(vec![
                state.t,
                l2_u,
                linf_u,
                l2_q,
                linf_q,
                s.w01[0],
                energy,
                div,
                trace_rel,
                cfl,
                tracker.value(),
            ]);
            if snapshot_every > 0 && state.step_index % (snapshot_every as u64) == 0 {
                let path = out.join(format!("snapshot_{snap_count:05}.qtns"));
                save_snapshot(state, &params, &path)?;
                snap_count += 1;
            }
            Ok(())
        };
        if let Err(e) = record() {
            observe_err = Some(e);
        }
    })
    .map_err(|e| anyhow!(e))?;
    if let Some(e) = observe_err {
        return Err(e.context("observer failed"));
    }
    write_diagnostics(SIMULATE_COLUMNS, &rows, &ctx.path("diagnostics.csv"))?;
    save_snapshot(&report.final_state, &params, &ctx.path("final.qtns"))?;

    let n_value = tracker.value();
    let mut line = format!(
        "simulate: {} steps to t = {:.4}, data norm (surrogate) {:.3e}, trajectory norm {:.6e}, max CFL {:.3e}",
        report.steps, report.final_state.t, init_report.i_value, n_value, report.cfl_max
    );
    if let Some(b) = &report.blowup {
        line.push_str(&format!("; FINDING: blow-up detected ({b})"));
    }
    Ok(line)
}

// -- duhamel / split ----------------------------------------------------------------

fn recorded_forcing(
    ctx: &Ctx,
    n_steps: usize,
    dt: f64,
) -> Result<qtlab_core::stepper::RecordedRun> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let grid_spec = cfg.grid();
    let (u0, q0, _) = generate_initial_data(cfg, ctx.seed)?;
    let mut scheme = cfg.scheme();
    scheme.dt = dt;
    let stepper = Stepper::new(grid_spec, params, scheme).map_err(|e| anyhow!(e))?;
    run_recording(&SimState::new(u0, q0), &stepper, n_steps).map_err(|e| anyhow!(e))
}

pub fn duhamel_check(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let lambda1 = cfg.model_lambda1;
    let run = recorded_forcing(ctx, cfg.duhamel_steps, cfg.duhamel_dt)?;
    let u0 = run.states.u[0].clone();
    let q0 = run.states.q[0].clone();

    let split = shifted_split_run(&u0, &q0, &run.forcings, lambda1, &params, cfg.scheme())
        .map_err(|e| anyhow!(e))?;
    // Quadrature route for the compensation solution vs its direct integration.
    let (du, dq) = duhamel_solve(&u0, &q0, &split.v1, lambda1, &params).map_err(|e| anyhow!(e))?;
    let scale = split
        .v2_final
        .0
        .max_abs()
        .max(split.v2_final.1.max_abs())
        .max(1e-300);
    let mut err = 0.0f64;
    for (a, b) in du.data.iter().zip(split.v2_final.0.data.iter()) {
        err = err.max((a - b).norm());
    }
    for (a, b) in dq.data.iter().zip(split.v2_final.1.data.iter()) {
        err = err.max((a - b).norm());
    }
    let rel = err / scale;
    write_diagnostics(
        &["lambda1", "duhamel_vs_direct", "recombination"],
        &[vec![lambda1, rel, split.recombination_rel_error]],
        &ctx.path("duhamel_check.csv"),
    )?;
    if rel > 1e-4 {
        bail!("duhamel check failed: quadrature vs direct rel err {rel:.3e} exceeds 1e-4");
    }
    if split.recombination_rel_error > 1e-6 {
        bail!(
            "duhamel check failed: recombination rel err {:.3e} exceeds 1e-6",
            split.recombination_rel_error
        );
    }
    Ok(format!(
        "duhamel check: lambda1 {lambda1}, quadrature vs direct {rel:.3e}, recombination {:.3e} over {} steps",
        split.recombination_rel_error, cfg.duhamel_steps
    ))
}

pub fn split_check(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let run = recorded_forcing(ctx, cfg.split_steps, cfg.split_dt)?;
    let u0 = run.states.u[0].clone();
    let q0 = run.states.q[0].clone();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &lambda1 in &cfg.split_lambda1_values {
        let split = shifted_split_run(&u0, &q0, &run.forcings, lambda1, &params, cfg.scheme())
            .map_err(|e| anyhow!(e))?;
        rows.push(vec![lambda1, split.recombination_rel_error]);
        worst = worst.max(split.recombination_rel_error);
    }
    write_diagnostics(&["lambda1", "recombination"], &rows, &ctx.path("split_check.csv"))?;
    if worst > 1e-6 {
        bail!("split check failed: recombination rel err {worst:.3e} exceeds 1e-6");
    }
    Ok(format!(
        "split check: shifts {:?}, worst recombination rel err {:.3e} over {} steps",
        cfg.split_lambda1_values, worst, cfg.split_steps
    ))
}

// -- norms ------------------------------------------------------------------------

pub fn norms(ctx: &Ctx) -> Result<String> {
    let cfg = ctx.cfg;
    let params = cfg.params();
    let exps = ctx.exponents()?;
    let n_steps = ((cfg.run_t_end / cfg.scheme_dt).round() as usize).max(4);
    let capped = n_steps.min(cfg.norms_max_record_steps);
    let run = recorded_forcing(ctx, capped, cfg.scheme_dt)?;

    let mut tracker = NormTracker::new(exps);
    for k in 0..run.states.len() {
        let t = k as f64 * run.dt;
        let (dtu, dtq) =
            state_time_derivative(&run.states.u[k], &run.states.q[k], &params, cfg.scheme_dealias);
        tracker.update(t, &run.states.u[k], &run.states.q[k], &dtu, &dtq).map_err(|e| anyhow!(e))?;
    }
    let rows: Vec<Vec<f64>> = tracker
        .samples
        .iter()
        .map(|s| vec![s.t, s.w01[0], s.w01[1], s.dt_w01[0], s.dt_w01[1], s.grad_w12_q1, s.w23_q2])
        .collect();
    write_diagnostics(
        &["t", "w01_q1", "w01_q2", "dt_w01_q1", "dt_w01_q2", "grad_w12_q1", "w23_q2"],
        &rows,
        &ctx.path("norms.csv"),
    )?;
    let n_value = tracker.value();

    let bound_rows = nonlinear_bound_check(&run, &exps, &params).map_err(|e| anyhow!(e))?;
    let table: Vec<Vec<f64>> = bound_rows
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i as f64, r.lhs, r.rhs, r.ratio.unwrap_or(-1.0)])
        .collect();
    write_diagnostics(&["row", "lhs", "rhs", "ratio"], &table, &ctx.path("bounds.csv"))?;
    let labels: Vec<String> = bound_rows
        .iter()
        .map(|r| {
            let ratio = r
                .ratio
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "vacuous".into());
            format!("{}: {}", r.label, ratio)
        })
        .collect();
    Ok(format!(
        "norms: trajectory norm {:.6e} over {} samples (p {:.2}, q1 {:.2}, q2 {:.2}, b {:.3}); bounds {}",
        n_value,
        tracker.samples.len(),
        exps.p,
        exps.q1,
        exps.q2,
        exps.b,
        labels.join("; ")
    ))
}

/// Parse QTLAB_THREADS and cap the global thread pool (no-op when unset or
/// already initialized).
pub fn init_thread_cap() {
    if let Ok(v) = std::env::var("QTLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

pub fn write_echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;
    std::fs::write(out.join("config.echo"), cfg.echo())?;
    Ok(())
}
