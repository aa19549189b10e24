use std::path::Path;

use num_complex::Complex64;
use qmix::diagnostics::{decay_fit, least_squares, weighted_norm_between, DecayWeight, NormParams};
use qmix::linear::{free_trace, linear_density_green, linear_density_volterra, DensityTrace, InitialWigner};
use qmix::nonlinear::{simulate, SimConfig, SimOutput};
use qmix::penrose::{nyquist_curve, penrose_margin, quick_check};
use qmix::{Error, InteractionKernel, VelocityProfile};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{label, write_json, Csv};
use crate::CliError;

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub hash: &'a str,
    pub out: &'a Path,
    pub force: bool,
}

fn axis_vector(dim: usize, norm: f64) -> Vec<f64> {
    let mut k = vec![0.0; dim];
    k[0] = norm;
    k
}

fn norm(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn penrose(ctx: &Context) -> Result<(), CliError> {
    let block = ctx.config.penrose_block()?;
    let g = VelocityProfile::from_spec(block.dim, &block.profile, block.profile_amplitude)?;
    let w = InteractionKernel::from_spec(block.dim, &block.kernel, block.coupling)?;
    let res = block.resolution.clone().unwrap_or_default();
    let report = penrose_margin(&w, &g, &block.hbar_set, block.k_max, block.lambda_max, &res)?;
    write_json(&ctx.out.join("penrose_report.json"), &report)?;

    let n = res.n_nyquist.max(3) | 1;
    let taus: Vec<f64> = (0..n)
        .map(|j| block.lambda_max * (2.0 * j as f64 / (n - 1) as f64 - 1.0))
        .collect();
    for &kn in &block.nyquist_k {
        for &hbar in &block.hbar_set {
            let curve = nyquist_curve(&w, &g, &axis_vector(block.dim, kn), hbar, &taus)?;
            let mut csv = Csv::new(&["tau", "re_l", "im_l"]);
            for (t, v) in curve.taus.iter().zip(&curve.values) {
                csv.row(&[*t, v.re, v.im]);
            }
            csv.write(&ctx.out.join(format!("nyquist_{kn}_{hbar}.csv")), ctx.hash)?;
        }
    }
    eprintln!(
        "kappa = {:.6e}, verdict: {}",
        report.kappa,
        if report.stable { "stable" } else { "unstable" }
    );
    Ok(())
}

fn stability_gate(w: &InteractionKernel, g: &VelocityProfile, hbar: f64, k_max: f64) -> Result<(), CliError> {
    if w.is_zero() {
        return Ok(());
    }
    let report = quick_check(w, g, &[hbar], k_max)?;
    if report.stable {
        Ok(())
    } else {
        Err(CliError::Refused(format!(
            "stability pre-check failed (kappa = {:.3e}); rerun with --force to proceed",
            report.kappa
        )))
    }
}

fn relative_gap(a: &DensityTrace, b: &DensityTrace) -> f64 {
    let scale = b.sup_norm();
    if scale == 0.0 {
        a.sup_distance(b)
    } else {
        a.sup_distance(b) / scale
    }
}

pub fn linear(ctx: &Context) -> Result<(), CliError> {
    let block = ctx.config.linear_block()?;
    let g = VelocityProfile::from_spec(block.dim, &block.profile, block.profile_amplitude)?;
    let w = InteractionKernel::from_spec(block.dim, &block.kernel, block.coupling)?;
    let init = InitialWigner::from_spec(block.dim, ctx.config.initial()?)?;
    if ctx.config.traced_modes.is_empty() {
        return Err(CliError::Config("traced_modes: at least one mode is required".into()));
    }
    let k_reach = ctx.config.traced_modes.iter().map(|k| norm(k)).fold(0.0, f64::max);
    if !ctx.force {
        stability_gate(&w, &g, block.hbar, k_reach)?;
    }
    for k in &ctx.config.traced_modes {
        let volterra = linear_density_volterra(&init, &w, &g, block.hbar, k, block.dt, block.t_final)?;
        let green = linear_density_green(&init, &w, &g, block.hbar, k, block.dt, block.t_final, &block.green)?;
        let free = free_trace(&init, k, block.hbar, block.dt, block.t_final)?;
        let mut csv = Csv::new(&["t", "re_volterra", "im_volterra", "re_green", "im_green", "abs_free"]);
        for (j, t) in volterra.times().enumerate() {
            let (v, gr, f) = (volterra.values[j], green.values[j], free.values[j]);
            csv.row(&[t, v.re, v.im, gr.re, gr.im, f.norm()]);
        }
        csv.note("max_relative_gap", format!("{:.6e}", relative_gap(&green, &volterra)));
        match decay_fit(&volterra, DecayWeight::KtBracket) {
            Ok(fit) => csv.note("decay_exponent", format!("{:.6}", fit.exponent)),
            Err(e) => csv.note("decay_exponent", format!("undefined ({e})")),
        }
        csv.write(&ctx.out.join(format!("linear_{}.csv", label(k))), ctx.hash)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScatteringJson<'a> {
    rate_exponent: Option<f64>,
    loglog_slope: Option<f64>,
    monotone: bool,
    times: &'a [f64],
    residuals: &'a [f64],
    dt: f64,
    max_asymmetry: f64,
    trace_drift: f64,
    instability: &'a Option<String>,
}

fn run(ctx: &Context, sim: &SimConfig) -> Result<(SimOutput, InitialWigner), CliError> {
    let init = InitialWigner::from_spec(sim.dim, ctx.config.initial()?)?;
    let mut sim = sim.clone();
    if ctx.force {
        sim.skip_penrose_check = true;
    }
    let out = simulate(&sim, &init).map_err(|e| match e {
        Error::Instability(msg) => CliError::Refused(format!("{msg}; rerun with --force to proceed")),
        e => e.into(),
    })?;
    Ok((out, init))
}

pub fn simulate_cmd(ctx: &Context) -> Result<(), CliError> {
    let sim = ctx.config.sim_config()?;
    let (out, init) = run(ctx, &sim)?;
    write_run(ctx, &sim, &init, &out)?;
    match &out.instability {
        Some(msg) => Err(CliError::Numerical(msg.clone())),
        None => Ok(()),
    }
}

fn write_run(ctx: &Context, sim: &SimConfig, init: &InitialWigner, out: &SimOutput) -> Result<(), CliError> {
    let mut header = vec!["t".to_string()];
    for k in &sim.traced_modes {
        let l = label(k);
        header.extend([format!("re_{l}"), format!("im_{l}"), format!("re_linear_{l}"), format!("im_linear_{l}")]);
    }
    // linear reference on the output grid, from the same ε-scaled data
    let scaled = init.scaled(sim.epsilon);
    let g = sim.build_profile()?;
    let w = sim.build_kernel()?;
    let out_dt = out.dt * sim.output_stride as f64;
    let t_end = out.times.last().copied().unwrap_or(0.0);
    let linear: Vec<Option<DensityTrace>> = sim
        .traced_modes
        .iter()
        .map(|k| {
            if t_end < out_dt {
                return None;
            }
            linear_density_volterra(&scaled, &w, &g, sim.hbar, k, out_dt, t_end).ok()
        })
        .collect();
    let mut csv = Csv::new(&header);
    for (j, t) in out.times.iter().enumerate() {
        let mut row = vec![*t];
        for (trace, lin) in out.traces.iter().zip(&linear) {
            let v = trace.values[j];
            let l = lin
                .as_ref()
                .and_then(|l| {
                    let m = (t / out_dt).round() as usize;
                    ((m as f64 * out_dt - t).abs() < 1e-9 * out_dt.max(1.0)).then(|| l.values.get(m).copied())?
                })
                .unwrap_or(Complex64::new(f64::NAN, f64::NAN));
            row.extend([v.re, v.im, l.re, l.im]);
        }
        csv.row(&row);
    }
    for ((k, trace), lin) in sim.traced_modes.iter().zip(&out.traces).zip(&linear) {
        if let Some(lin) = lin {
            let n = trace.len().min(lin.len());
            let gap = (0..n).map(|j| (trace.values[j] - lin.values[j]).norm()).fold(0.0, f64::max);
            let scale = lin.values[..n].iter().map(|v| v.norm()).fold(0.0, f64::max);
            let rel = if scale > 0.0 { gap / scale } else { gap };
            csv.note(&format!("linear_gap_{}", label(k)), format!("{rel:.6e}"));
        }
    }
    csv.write(&ctx.out.join("density.csv"), ctx.hash)?;

    let m = &out.monitors;
    let mut csv = Csv::new(&["t", "b1", "b2", "b3", "b4", "b5"]);
    for j in 0..m.len() {
        csv.row(&[m.times[j], m.b1[j], m.b2[j], m.b3[j], m.b4[j], m.b5[j]]);
    }
    if let Some(th) = m.thresholds {
        csv.note("thresholds", format!("{th:?}"));
    }
    csv.write(&ctx.out.join("monitors.csv"), ctx.hash)?;

    let empty: Vec<f64> = Vec::new();
    let sc = out.scattering.as_ref();
    write_json(
        &ctx.out.join("scattering.json"),
        &ScatteringJson {
            rate_exponent: sc.and_then(|s| s.rate_exponent),
            loglog_slope: sc.and_then(|s| s.loglog_slope),
            monotone: sc.map(|s| s.monotone).unwrap_or(false),
            times: sc.map(|s| s.times.as_slice()).unwrap_or(&empty),
            residuals: sc.map(|s| s.cauchy_residuals.as_slice()).unwrap_or(&empty),
            dt: out.dt,
            max_asymmetry: out.max_asymmetry,
            trace_drift: out.trace_drift,
            instability: &out.instability,
        },
    )?;
    let mut log = out.warnings.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    std::fs::write(ctx.out.join("warnings.log"), log).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

pub fn sweep_hbar(ctx: &Context) -> Result<(), CliError> {
    let base = ctx.config.sim_config()?;
    let mut hbars: Vec<f64> = ctx.config.hbar_sweep.clone();
    if hbars.is_empty() {
        return Err(CliError::Config("hbar_sweep: at least one value is required".into()));
    }
    if !hbars.contains(&0.0) {
        hbars.push(0.0);
    }
    hbars.sort_by(|a, b| b.total_cmp(a));
    hbars.dedup();

    let mut reference = base.clone();
    reference.hbar = 0.0;
    let (ref_out, _) = run(ctx, &reference)?;
    if let Some(msg) = &ref_out.instability {
        return Err(CliError::Numerical(format!("hbar = 0: {msg}")));
    }
    let params = NormParams::plain(base.sigma[0], base.moments);
    let mut rows = Vec::new();
    for &h in &hbars {
        let (dens, scat) = if h == 0.0 {
            (0.0, 0.0)
        } else {
            let mut cfg = base.clone();
            cfg.hbar = h;
            cfg.dt = Some(ref_out.dt);
            let (out, _) = run(ctx, &cfg)?;
            if let Some(msg) = &out.instability {
                return Err(CliError::Numerical(format!("hbar = {h}: {msg}")));
            }
            let dens = out
                .traces
                .iter()
                .zip(&ref_out.traces)
                .map(|(a, b)| a.sup_distance(b))
                .fold(0.0, f64::max);
            let scat = weighted_norm_between(&out.final_field, &ref_out.final_field, &params)?;
            (dens, scat)
        };
        rows.push((h, dens, scat));
    }

    let mut csv = Csv::new(&["hbar", "density_distance", "scattering_distance", "local_order"]);
    for (i, &(h, d, s)) in rows.iter().enumerate() {
        let order = match rows.get(i + 1) {
            Some(&(h2, d2, _)) if h > 0.0 && h2 > 0.0 && d > 0.0 && d2 > 0.0 => (d / d2).ln() / (h / h2).ln(),
            _ => f64::NAN,
        };
        csv.row(&[h, d, s, order]);
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.0 > 0.0 && r.1 > 0.0)
        .map(|r| (r.0.ln(), r.1.ln()))
        .collect();
    if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let Ok((slope, _, _)) = least_squares(&xs, &ys) {
            csv.note("fitted_order", format!("{slope:.6}"));
        }
    }
    csv.write(&ctx.out.join("sweep.csv"), ctx.hash)?;
    Ok(())
}
