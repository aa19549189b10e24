//! Weighted norms, bootstrap monitors, decay fits and physical-space density bounds.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::DensityTrace;
use crate::nonlinear::WignerField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightMode {
    Plain,
    /// Extra multiplier ⟨tk, η⟩.
    TimeWeighted { t: f64 },
    /// Extra multiplier |k|^δ.
    XiWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub sigma: f64,
    pub moments: usize,
    pub weight: WeightMode,
    pub delta: f64,
}

impl NormParams {
    pub fn plain(sigma: f64, moments: usize) -> Self {
        NormParams {
            sigma,
            moments,
            weight: WeightMode::Plain,
            delta: 0.0,
        }
    }
}

pub const MAX_MOMENTS: usize = 4;

fn bracket(xs: impl Iterator<Item = f64>) -> f64 {
    (1.0 + xs.map(|x| x * x).sum::<f64>()).sqrt()
}

/// All multi-indices of length `dim` with total order at most `max`.
fn multi_indices(dim: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                let used: usize = prefix.iter().sum();
                (0..=max - used).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

const FIRST: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const SECOND: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

/// Fourth-order centered difference along one axis of a row-major array; zero outside the box.
fn diff_axis(data: &[Complex64], shape: &[usize], axis: usize, second: bool, h: f64) -> Vec<Complex64> {
    let (stencil, scale) = if second {
        (SECOND, 1.0 / (12.0 * h * h))
    } else {
        (FIRST, 1.0 / (12.0 * h))
    };
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for o in 0..outer {
        for j in 0..n {
            let dst = (o * n + j) * inner;
            for (s, c) in stencil.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                let src = j as isize + s as isize - 2;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let from = (o * n + src as usize) * inner;
                for i in 0..inner {
                    out[dst + i] += data[from + i] * (c * scale);
                }
            }
        }
    }
    out
}

/// ∂^order along `axis`, built from first and second difference stencils.
fn derivative(data: &[Complex64], shape: &[usize], axis: usize, order: usize, h: f64) -> Vec<Complex64> {
    let mut cur = data.to_vec();
    for _ in 0..order / 2 {
        cur = diff_axis(&cur, shape, axis, true, h);
    }
    if order % 2 == 1 {
        cur = diff_axis(&cur, shape, axis, false, h);
    }
    cur
}

fn check_stencil(field: &WignerField, moments: usize) -> Result<()> {
    if moments > MAX_MOMENTS {
        return Err(Error::Config(format!(
            "at most {MAX_MOMENTS} moments are supported, got {moments}"
        )));
    }
    if field.eta_axis().len() < 2 * (moments + 2) + 1 {
        return Err(Error::Config(format!(
            "eta grid of {} points is too small for {moments} moments",
            field.eta_axis().len()
        )));
    }
    Ok(())
}

fn weight_fn(params: &NormParams) -> impl Fn(&[f64], &[f64]) -> f64 + Sync + '_ {
    move |k: &[f64], eta: &[f64]| {
        let base = bracket(k.iter().chain(eta).copied()).powf(params.sigma);
        match params.weight {
            WeightMode::Plain => base,
            WeightMode::TimeWeighted { t } => {
                base * bracket(k.iter().map(|x| x * t).chain(eta.iter().copied()))
            }
            WeightMode::XiWeighted => {
                base * k.iter().map(|x| x * x).sum::<f64>().sqrt().powf(params.delta)
            }
        }
    }
}

fn weighted_sq_rows(
    field: &WignerField,
    params: &NormParams,
    row: impl Fn(usize) -> Vec<Complex64> + Sync,
) -> Result<f64> {
    check_stencil(field, params.moments)?;
    if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
        return Err(Error::Config("sigma must be finite and nonnegative".into()));
    }
    let d = field.dim();
    let shape = vec![field.eta_axis().len(); d];
    let h = field.eta_axis().spacing;
    let alphas = multi_indices(d, params.moments);
    let etas: Vec<Vec<f64>> = (0..field.n_eta()).map(|el| field.eta_point(el)).collect();
    let weight = weight_fn(params);
    let cell = (field.k_axis().spacing * h).powi(d as i32);
    let total: f64 = (0..field.n_k())
        .into_par_iter()
        .map(|kl| {
            let values = row(kl);
            if values.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                return 0.0;
            }
            let k = field.k_point(kl);
            let wts: Vec<f64> = etas.iter().map(|e| weight(&k, e)).collect();
            alphas
                .iter()
                .map(|alpha| {
                    let mut cur = values.clone();
                    for (axis, &order) in alpha.iter().enumerate() {
                        if order > 0 {
                            cur = derivative(&cur, &shape, axis, order, h);
                        }
                    }
                    cur.iter().zip(&wts).map(|(v, w)| (w * v.norm()).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total * cell)
}

/// (Σ_{|α|≤M} ‖⟨k,η⟩^σ · multiplier · ∂_η^α Ŵ‖²)^{1/2} in the grid L² sense.
pub fn weighted_norm(field: &WignerField, params: &NormParams) -> Result<f64> {
    Ok(weighted_sq_rows(field, params, |kl| field.row(kl).to_vec())?.sqrt())
}

/// Weighted norm of the difference of two fields on the same grid.
pub fn weighted_norm_between(a: &WignerField, b: &WignerField, params: &NormParams) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::Config("fields live on different grids".into()));
    }
    Ok(weighted_sq_rows(a, params, |kl| {
        a.row(kl).iter().zip(b.row(kl)).map(|(x, y)| x - y).collect()
    })?
    .sqrt())
}

/// Double-weighted norm with k-derivatives up to order `n` and η-derivatives up to `m`.
/// Intended for initial data only.
pub fn admissibility_norm(field: &WignerField, sigma: f64, n: usize, m: usize) -> Result<f64> {
    check_stencil(field, m)?;
    if n > MAX_MOMENTS || field.k_axis().len() < 2 * (n + 2) + 1 {
        return Err(Error::Config("k grid too small for the requested derivatives".into()));
    }
    let d = field.dim();
    let mut shape = vec![field.k_axis().len(); d];
    shape.extend(std::iter::repeat_n(field.eta_axis().len(), d));
    let params = NormParams::plain(sigma, m);
    let mut total = 0.0;
    for beta in multi_indices(d, n) {
        let mut cur = field.values.clone();
        for (axis, &order) in beta.iter().enumerate() {
            if order > 0 {
                cur = derivative(&cur, &shape, axis, order, field.k_axis().spacing);
            }
        }
        let n_eta = field.n_eta();
        total += weighted_sq_rows(field, &params, |kl| cur[kl * n_eta..(kl + 1) * n_eta].to_vec())?;
    }
    Ok(total.sqrt())
}

/// Grid L² norm of Ŵ rescaled to the Hilbert–Schmidt norm of the operator, (2π)^{d/2}‖Ŵ‖.
pub fn hilbert_schmidt_norm(field: &WignerField) -> Result<f64> {
    let plain = weighted_norm(field, &NormParams::plain(0.0, 0))?;
    Ok((2.0 * std::f64::consts::PI).powf(field.dim() as f64 / 2.0) * plain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub sigma: [f64; 5],
    pub moments: usize,
    pub delta: f64,
    pub hbar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub t: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub times: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub b3: Vec<f64>,
    pub b4: Vec<f64>,
    pub b5: Vec<f64>,
    /// Reference levels 4Kᵢε², when supplied.
    pub thresholds: Option<[f64; 5]>,
}

impl MonitorSeries {
    pub fn new(thresholds: Option<[f64; 5]>) -> Self {
        MonitorSeries {
            thresholds,
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: MonitorRow) {
        self.times.push(row.t);
        self.b1.push(row.b1);
        self.b2.push(row.b2);
        self.b3.push(row.b3);
        self.b4.push(row.b4);
        self.b5.push(row.b5);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = MonitorRow> + '_ {
        (0..self.len()).map(|i| MonitorRow {
            t: self.times[i],
            b1: self.b1[i],
            b2: self.b2[i],
            b3: self.b3[i],
            b4: self.b4[i],
            b5: self.b5[i],
        })
    }
}

/// Pointwise-in-time integrands of the two density monitors.
fn density_integrands(ks: &[Vec<f64>], rho: &[Complex64], t: f64, cell: f64, p: &MonitorParams) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut sup: f64 = 0.0;
    for (k, r) in ks.iter().zip(rho) {
        let kn = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        if kn == 0.0 {
            continue;
        }
        let kt = bracket(k.iter().copied().chain(k.iter().map(|x| x * t)));
        let a = r.norm();
        let hk = (1.0 + (p.hbar * kn).powi(2)).sqrt();
        l2 += (hk * kn.sqrt() * kt.powf(p.sigma[4]) * a).powi(2) * cell;
        sup = sup.max((kn.sqrt() * kt.powf(p.sigma[2]) * a).powi(2));
    }
    (l2, sup)
}

/// One row of (B1)–(B5) at the field's time; `history` holds (t, ρ̂ over the k grid) up to now.
pub fn bootstrap_monitors(
    field: &WignerField,
    history: &[(f64, Vec<Complex64>)],
    params: &MonitorParams,
) -> Result<MonitorRow> {
    if history.is_empty() {
        return Err(Error::InsufficientData("density history is empty".into()));
    }
    let t = field.time;
    let s = params.sigma;
    let b1 = weighted_norm(
        field,
        &NormParams {
            sigma: s[4],
            moments: params.moments,
            weight: WeightMode::TimeWeighted { t },
            delta: params.delta,
        },
    )?
    .powi(2);
    let b3 = weighted_norm(
        field,
        &NormParams {
            sigma: s[3],
            moments: params.moments,
            weight: WeightMode::XiWeighted,
            delta: params.delta,
        },
    )?
    .powi(2);
    let b5 = (0..field.n_k())
        .into_par_iter()
        .map(|kl| {
            let k = field.k_point(kl);
            field
                .row(kl)
                .iter()
                .enumerate()
                .map(|(el, v)| {
                    let eta = field.eta_point(el);
                    bracket(k.iter().chain(&eta).copied()).powf(2.0 * s[1]) * v.norm_sqr()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let ks = field.k_points();
    let cell = field.k_axis().spacing.powi(field.dim() as i32);
    let integrands: Vec<(f64, f64, f64)> = history
        .iter()
        .map(|(ti, rho)| {
            if rho.len() != ks.len() {
                return Err(Error::Config("density history does not match the k grid".into()));
            }
            let (a, b) = density_integrands(&ks, rho, *ti, cell, params);
            Ok((*ti, a, b))
        })
        .collect::<Result<_>>()?;
    let (b2, b4) = integrands.windows(2).fold((0.0, 0.0), |(x, y), w| {
        let h = w[1].0 - w[0].0;
        (x + 0.5 * h * (w[0].1 + w[1].1), y + 0.5 * h * (w[0].2 + w[1].2))
    });
    Ok(MonitorRow { t, b1, b2, b3, b4, b5 })
}

/// Least-squares line y ≈ slope·x + intercept; returns (slope, intercept, rms residual).
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::InsufficientData(format!("{n} points cannot define a line")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    Ok((slope, intercept, (rss / n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayWeight {
    /// Abscissa ⟨k, kt⟩.
    KtBracket,
    /// Abscissa ⟨t⟩.
    TPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// p in |ρ̂| ~ x^{-p}.
    pub exponent: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    pub samples: usize,
}

pub const DECAY_FLOOR: f64 = 1e-12;

pub fn decay_fit(trace: &DensityTrace, weight: DecayWeight) -> Result<DecayFit> {
    decay_fit_with(trace, weight, DECAY_FLOOR, 0.1)
}

pub fn decay_fit_with(trace: &DensityTrace, weight: DecayWeight, floor: f64, skip_fraction: f64) -> Result<DecayFit> {
    let skip = (skip_fraction * trace.len() as f64).floor() as usize;
    let (xs, ys): (Vec<f64>, Vec<f64>) = trace
        .times()
        .zip(&trace.values)
        .skip(skip)
        .filter(|(_, v)| v.norm() > floor)
        .map(|(t, v)| {
            let x = match weight {
                DecayWeight::KtBracket => bracket(trace.k.iter().copied().chain(trace.k.iter().map(|k| k * t))),
                DecayWeight::TPower => bracket(std::iter::once(t)),
            };
            (x.ln(), v.norm().ln())
        })
        .unzip();
    if xs.is_empty() {
        return Err(Error::UndefinedFit("every sample lies below the floor".into()));
    }
    if xs.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} usable samples, need 10",
            xs.len()
        )));
    }
    let (slope, _, residual) = least_squares(&xs, &ys)?;
    Ok(DecayFit {
        exponent: -slope,
        residual,
        samples: xs.len(),
    })
}

/// Hausdorff–Young majorant (Σ_k ⟨k,kt⟩^{p'n} |ρ̂(k)|^{p'} cell)^{1/p'} of ‖⟨∇, t∇⟩^n ρ‖_{L^p}.
/// For p = ∞ (p' = 1) this is the weighted ℓ¹ sum.
pub fn physical_lp_density(ks: &[Vec<f64>], rho: &[Complex64], cell: f64, p: f64, n: f64, t: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::Domain(format!("p must lie in [2, inf], got {p}")));
    }
    if !(n >= 0.0 && cell > 0.0) || ks.len() != rho.len() {
        return Err(Error::Domain("need n >= 0, a positive cell and matching lengths".into()));
    }
    let q = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
    let sum: f64 = ks
        .iter()
        .zip(rho)
        .map(|(k, r)| {
            let w = bracket(k.iter().copied().chain(k.iter().map(|x| x * t)));
            (w.powf(n) * r.norm()).powf(q)
        })
        .sum();
    Ok((sum * cell).powf(1.0 / q))
}
