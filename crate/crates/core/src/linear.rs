//! Linearized density dynamics: free phase mixing, the Volterra march and the Green-function route.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_vector, norm, InteractionKernel, VelocityProfile};
use crate::nonlinear::WignerField;
use crate::penrose::symbol_radial;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Free,
    Volterra,
    Green,
    Nonlinear,
}

/// Time series ρ̂(t_j, k) on t_j = j dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTrace {
    pub k: Vec<f64>,
    pub dt: f64,
    pub values: Vec<Complex64>,
    pub hbar: f64,
    pub provenance: Provenance,
}

impl DensityTrace {
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |j| self.time(j))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// max_j |self_j - other_j| over the common samples.
    pub fn sup_distance(&self, other: &DensityTrace) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn bracket(k: &[f64], eta: &[f64]) -> f64 {
    (1.0 + k.iter().chain(eta).map(|x| x * x).sum::<f64>()).sqrt()
}

/// Fourier–Wigner transform of the initial perturbation, Ŵ[Q_in](k, η).
#[derive(Debug, Clone)]
pub enum InitialWigner {
    /// A exp(-|k|²/a² - |η|²/b²) e^{-i k·x0}.
    Gaussian {
        amplitude: f64,
        k_scale: f64,
        eta_scale: f64,
        offset: Vec<f64>,
    },
    /// A ⟨k/a, η/b⟩^{-power}.
    Bracket {
        amplitude: f64,
        power: f64,
        k_scale: f64,
        eta_scale: f64,
    },
    /// A exp(-|k|²/a²) ⟨η/b⟩^{-power}.
    Mixed {
        amplitude: f64,
        power: f64,
        k_scale: f64,
        eta_scale: f64,
    },
    /// Samples on a (k, η) grid, interpolated.
    Grid(Box<WignerField>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        k_scale: f64,
        #[serde(default = "one")]
        eta_scale: f64,
        #[serde(default)]
        offset: Vec<f64>,
    },
    Bracket {
        #[serde(default = "one")]
        amplitude: f64,
        power: f64,
        #[serde(default = "one")]
        k_scale: f64,
        #[serde(default = "one")]
        eta_scale: f64,
    },
    Mixed {
        #[serde(default = "one")]
        amplitude: f64,
        power: f64,
        #[serde(default = "one")]
        k_scale: f64,
        #[serde(default = "one")]
        eta_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl InitialWigner {
    pub fn gaussian(amplitude: f64, k_scale: f64, eta_scale: f64) -> Self {
        InitialWigner::Gaussian {
            amplitude,
            k_scale,
            eta_scale,
            offset: Vec::new(),
        }
    }

    pub fn bracket(amplitude: f64, power: f64) -> Self {
        InitialWigner::Bracket {
            amplitude,
            power,
            k_scale: 1.0,
            eta_scale: 1.0,
        }
    }

    pub fn from_spec(dim: usize, spec: &InitialSpec) -> Result<Self> {
        let init = match spec {
            InitialSpec::Gaussian {
                amplitude,
                k_scale,
                eta_scale,
                offset,
            } => {
                if !offset.is_empty() {
                    check_vector(offset, dim, "offset")?;
                }
                if !(*k_scale > 0.0 && *eta_scale > 0.0) {
                    return Err(Error::Domain("gaussian scales must be positive".into()));
                }
                InitialWigner::Gaussian {
                    amplitude: *amplitude,
                    k_scale: *k_scale,
                    eta_scale: *eta_scale,
                    offset: offset.clone(),
                }
            }
            InitialSpec::Bracket {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => {
                if !(*power >= 0.0) {
                    return Err(Error::Domain("bracket power must be nonnegative".into()));
                }
                if !(*k_scale > 0.0 && *eta_scale > 0.0) {
                    return Err(Error::Domain("bracket scales must be positive".into()));
                }
                InitialWigner::Bracket {
                    amplitude: *amplitude,
                    power: *power,
                    k_scale: *k_scale,
                    eta_scale: *eta_scale,
                }
            }
            InitialSpec::Mixed {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => {
                if !(*power >= 0.0) {
                    return Err(Error::Domain("bracket power must be nonnegative".into()));
                }
                if !(*k_scale > 0.0 && *eta_scale > 0.0) {
                    return Err(Error::Domain("mixed scales must be positive".into()));
                }
                InitialWigner::Mixed {
                    amplitude: *amplitude,
                    power: *power,
                    k_scale: *k_scale,
                    eta_scale: *eta_scale,
                }
            }
        };
        if !init.amplitude().is_finite() {
            return Err(Error::Domain("initial amplitude is not finite".into()));
        }
        Ok(init)
    }

    fn amplitude(&self) -> f64 {
        match self {
            InitialWigner::Gaussian { amplitude, .. }
            | InitialWigner::Bracket { amplitude, .. }
            | InitialWigner::Mixed { amplitude, .. } => *amplitude,
            InitialWigner::Grid(f) => f.max_abs(),
        }
    }

    /// Same data multiplied by a real factor.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            InitialWigner::Gaussian {
                amplitude,
                k_scale,
                eta_scale,
                offset,
            } => InitialWigner::Gaussian {
                amplitude: amplitude * factor,
                k_scale: *k_scale,
                eta_scale: *eta_scale,
                offset: offset.clone(),
            },
            InitialWigner::Bracket {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => InitialWigner::Bracket {
                amplitude: amplitude * factor,
                power: *power,
                k_scale: *k_scale,
                eta_scale: *eta_scale,
            },
            InitialWigner::Mixed {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => InitialWigner::Mixed {
                amplitude: amplitude * factor,
                power: *power,
                k_scale: *k_scale,
                eta_scale: *eta_scale,
            },
            InitialWigner::Grid(f) => {
                let mut f = f.clone();
                f.scale(factor);
                InitialWigner::Grid(f)
            }
        }
    }

    pub fn evaluate(&self, k: &[f64], eta: &[f64]) -> Complex64 {
        match self {
            InitialWigner::Gaussian {
                amplitude,
                k_scale,
                eta_scale,
                offset,
            } => {
                let k2: f64 = k.iter().map(|x| x * x).sum();
                let e2: f64 = eta.iter().map(|x| x * x).sum();
                let mag = amplitude * (-k2 / (k_scale * k_scale) - e2 / (eta_scale * eta_scale)).exp();
                let phase: f64 = -k.iter().zip(offset).map(|(a, b)| a * b).sum::<f64>();
                Complex64::from_polar(mag, phase)
            }
            InitialWigner::Bracket {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => {
                let k: Vec<f64> = k.iter().map(|x| x / k_scale).collect();
                let eta: Vec<f64> = eta.iter().map(|x| x / eta_scale).collect();
                Complex64::new(amplitude * bracket(&k, &eta).powf(-power), 0.0)
            }
            InitialWigner::Mixed {
                amplitude,
                power,
                k_scale,
                eta_scale,
            } => {
                let k2: f64 = k.iter().map(|x| x * x).sum();
                let eta: Vec<f64> = eta.iter().map(|x| x / eta_scale).collect();
                Complex64::new(amplitude * (-k2 / (k_scale * k_scale)).exp() * bracket(&[], &eta).powf(-power), 0.0)
            }
            InitialWigner::Grid(f) => f.interpolate(k, eta),
        }
    }
}

/// ρ̂_FH(t, k) = Ŵ[Q_in](k, kt).
pub fn free_density(init: &InitialWigner, k: &[f64], t: f64) -> Complex64 {
    let eta: Vec<f64> = k.iter().map(|x| x * t).collect();
    init.evaluate(k, &eta)
}

pub fn free_trace(init: &InitialWigner, k: &[f64], hbar: f64, dt: f64, t_final: f64) -> Result<DensityTrace> {
    let n = step_count(dt, t_final)?;
    Ok(DensityTrace {
        k: k.to_vec(),
        dt,
        values: (0..=n).map(|j| free_density(init, k, j as f64 * dt)).collect(),
        hbar,
        provenance: Provenance::Free,
    })
}

/// L̂(t, k) = (2π)^{-d} (2/ħ) ŵ(k) sin(½ħt|k|²) ĝ(kt); at ħ = 0 the sine factor is t|k|².
pub fn volterra_kernel(w: &InteractionKernel, g: &VelocityProfile, hbar: f64, t: f64, k: &[f64]) -> Result<f64> {
    check_vector(k, g.dim(), "wavevector")?;
    volterra_kernel_radial(w, g, hbar, t, norm(k))
}

pub(crate) fn volterra_kernel_radial(
    w: &InteractionKernel,
    g: &VelocityProfile,
    hbar: f64,
    t: f64,
    kn: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&hbar) {
        return Err(Error::Domain(format!("hbar must lie in [0, 1], got {hbar}")));
    }
    if kn == 0.0 {
        return Ok(0.0);
    }
    let k2 = kn * kn;
    let sine = if hbar > 0.0 {
        2.0 / hbar * (0.5 * hbar * t * k2).sin()
    } else {
        t * k2
    };
    Ok((2.0 * PI).powi(-(g.dim() as i32)) * w.hat_radial(kn)? * sine * g.fourier_radial(kn * t))
}

fn step_count(dt: f64, t_final: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !(t_final >= dt) {
        return Err(Error::Domain(format!("final time {t_final} is shorter than dt = {dt}")));
    }
    Ok((t_final / dt + 1e-9).floor() as usize)
}

/// Product-trapezoid march for φ(t) = H(t) - ∫₀ᵗ L(t - s) φ(s) ds on t_n = n dt.
pub fn solve_volterra(
    kernel: impl Fn(f64) -> f64,
    forcing: impl Fn(f64) -> Complex64,
    dt: f64,
    t_final: f64,
) -> Result<Vec<Complex64>> {
    let n = step_count(dt, t_final)?;
    let lk: Vec<f64> = (0..=n).map(|j| kernel(j as f64 * dt)).collect();
    let diag = 1.0 + 0.5 * dt * lk[0];
    if diag == 0.0 {
        return Err(Error::numerical("singular diagonal in the Volterra march", 0.0));
    }
    let mut phi = Vec::with_capacity(n + 1);
    phi.push(forcing(0.0));
    for m in 1..=n {
        let mut acc = phi[0] * (0.5 * lk[m]);
        for j in 1..m {
            acc += phi[j] * lk[m - j];
        }
        let v = (forcing(m as f64 * dt) - acc * dt) / diag;
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::numerical(format!("non-finite value at step {m}"), f64::NAN));
        }
        phi.push(v);
    }
    Ok(phi)
}

/// Linearized density by the Volterra route.
pub fn linear_density_volterra(
    init: &InitialWigner,
    w: &InteractionKernel,
    g: &VelocityProfile,
    hbar: f64,
    k: &[f64],
    dt: f64,
    t_final: f64,
) -> Result<DensityTrace> {
    check_vector(k, g.dim(), "wavevector")?;
    let kn = norm(k);
    volterra_kernel_radial(w, g, hbar, 0.0, kn)?;
    let values = solve_volterra(
        |t| volterra_kernel_radial(w, g, hbar, t, kn).unwrap_or(f64::NAN),
        |t| free_density(init, k, t),
        dt,
        t_final,
    )?;
    Ok(DensityTrace {
        k: k.to_vec(),
        dt,
        values,
        hbar,
        provenance: Provenance::Volterra,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenOptions {
    /// Half-width of the τ window; `None` picks a default from |k| and ħ.
    pub tau_max: Option<f64>,
    /// Number of τ intervals; `None` keeps the alias period above max(4 T, 100).
    pub n_tau: Option<usize>,
}

impl GreenOptions {
    /// Default window: 40·max(1, ⟨ħk⟩|k|).
    pub fn resolved_tau_max(&self, k_norm: f64, hbar: f64) -> f64 {
        self.tau_max.unwrap_or_else(|| {
            let hk = (1.0 + (hbar * k_norm).powi(2)).sqrt() * k_norm;
            40.0 * hk.max(1.0)
        })
    }

    pub fn resolved_n_tau(&self, tau_max: f64, t_final: f64) -> usize {
        self.n_tau.unwrap_or_else(|| {
            let d_tau = 2.0 * PI / (4.0 * t_final).max(100.0);
            let n = (2.0 * tau_max / d_tau).ceil() as usize;
            n + n % 2
        })
    }
}

/// Ĝ^r on a time grid with the estimated truncation error of the τ window.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenRemainder {
    pub values: Vec<Complex64>,
    pub truncation_bound: f64,
}

const DISPERSION_FLOOR: f64 = 1e-6;
const TAIL_ORDERS: usize = 4;

/// Coefficients c_n of Σ c_n (λ + b)^{-n}, n = 2..5, matching a2 λ^{-2} + a4 λ^{-4} through λ^{-5}.
fn tail_coefficients(a2: f64, a4: f64, b: f64) -> [f64; TAIL_ORDERS] {
    // target coefficients of λ^{-2..-5}
    let target = [a2, 0.0, a4, 0.0];
    let mut c = [0.0; TAIL_ORDERS];
    for p in 0..TAIL_ORDERS {
        // contribution of c_q (q < p) to λ^{-(p+2)}: C(-(q+2), p-q) b^{p-q}
        let mut acc = target[p];
        for q in 0..p {
            let n = (q + 2) as f64;
            let m = p - q;
            let mut binom = 1.0;
            for i in 0..m {
                binom *= -(n + i as f64) / (i as f64 + 1.0);
            }
            acc -= c[q] * binom * b.powi(m as i32);
        }
        c[p] = acc;
    }
    c
}

/// Ĝ^r(t, k) = (1/2π) ∫ e^{iτt} G̃(iτ) dτ with G̃ = L̃/(1 + L̃).
///
/// The large-τ expansion of G̃ is subtracted with terms whose inverse transforms are known in
/// closed form; the O(τ^{-6}) remainder is summed by the trapezoid rule through a chirp-z transform.
pub fn green_remainder(
    w: &InteractionKernel,
    g: &VelocityProfile,
    hbar: f64,
    k: &[f64],
    tau_max: f64,
    n_tau: usize,
    t_grid: &[f64],
) -> Result<GreenRemainder> {
    check_vector(k, g.dim(), "wavevector")?;
    let kn = norm(k);
    if !(tau_max > 0.0 && tau_max.is_finite()) || n_tau < 16 {
        return Err(Error::Domain("tau window needs tau_max > 0 and n_tau >= 16".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Domain("time grid must be finite and nonnegative".into()));
    }
    let d_tau = 2.0 * tau_max / n_tau as f64;
    let alias = 2.0 * PI / d_tau;
    if let Some(t) = t_grid.iter().find(|t| **t >= alias) {
        return Err(Error::Range(format!(
            "t = {t} lies beyond the alias-free window {alias:.6e}"
        )));
    }
    let zero = GreenRemainder {
        values: vec![Complex64::new(0.0, 0.0); t_grid.len()],
        truncation_bound: 0.0,
    };
    let w_hat = w.hat_radial(kn)?;
    if kn == 0.0 || w_hat == 0.0 {
        return Ok(zero);
    }

    let c0 = w_hat * (2.0 * PI).powi(-(g.dim() as i32));
    let g0 = g.fourier_radial(0.0);
    let m2 = g.marginal_second_moment();
    let k2 = kn * kn;
    let a2 = c0 * k2 * g0;
    let a4 = c0 * (-3.0 * k2 * k2 * m2 - hbar * hbar * k2 * k2 * k2 * g0 / 4.0);
    let b = kn.max(0.5);
    let coef = tail_coefficients(a2, a4 - a2 * a2, b);
    let tail = |lam: Complex64| -> Complex64 {
        let inv = (lam + b).inv();
        let mut p = inv * inv;
        let mut acc = Complex64::new(0.0, 0.0);
        for c in coef {
            acc += p * c;
            p *= inv;
        }
        acc
    };

    let taus: Vec<f64> = (0..=n_tau).map(|j| -tau_max + j as f64 * d_tau).collect();
    let remainder: Vec<Complex64> = taus
        .par_iter()
        .map(|&tau| -> Result<Complex64> {
            let lam = Complex64::new(0.0, tau);
            let l = symbol_radial(w, g, kn, lam, hbar)?;
            let denom = Complex64::new(1.0, 0.0) + l;
            if denom.norm() < DISPERSION_FLOOR {
                return Err(Error::Instability(format!(
                    "|1 + L| = {:.3e} at tau = {tau}, |k| = {kn}",
                    denom.norm()
                )));
            }
            Ok(l / denom - tail(lam))
        })
        .collect::<Result<_>>()?;

    let mut weighted = remainder.clone();
    weighted[0] *= 0.5;
    weighted[n_tau] *= 0.5;
    let sums = fourier_sum(&weighted, -tau_max, d_tau, t_grid);
    let scale = d_tau / (2.0 * PI);
    let values = t_grid
        .iter()
        .zip(sums)
        .map(|(&t, s)| {
            let mut closed = 0.0;
            let mut fact = 1.0;
            for (i, c) in coef.iter().enumerate() {
                let n = i + 2;
                fact *= (n - 1) as f64;
                closed += c * t.powi(n as i32 - 1) / fact;
            }
            s * scale + closed * (-b * t).exp()
        })
        .collect();

    // tail beyond the window from the sampled decay of the remainder at both ends
    let truncation_bound = {
        let near = |i: usize| remainder[i].norm();
        let quarter = n_tau / 4;
        let end_hi = near(n_tau).max(near(0));
        let mid = near(n_tau - quarter).max(near(quarter));
        let ratio = 2.0 * tau_max / (2.0 * tau_max - 2.0 * quarter as f64 * d_tau);
        let p = if end_hi > 0.0 && mid > end_hi {
            (mid / end_hi).ln() / ratio.ln()
        } else {
            6.0
        };
        if p > 1.0 {
            end_hi * tau_max / ((p - 1.0) * PI)
        } else {
            f64::INFINITY
        }
    };
    Ok(GreenRemainder {
        values,
        truncation_bound,
    })
}

/// S(t_m) = Σ_j a_j e^{i(τ0 + j dτ) t_m}; chirp-z when the t grid is uniform from 0.
fn fourier_sum(a: &[Complex64], tau0: f64, d_tau: f64, t_grid: &[f64]) -> Vec<Complex64> {
    let m = t_grid.len();
    if m == 0 {
        return Vec::new();
    }
    let uniform = m >= 2 && t_grid[0] == 0.0 && {
        let dt = t_grid[1];
        t_grid
            .iter()
            .enumerate()
            .all(|(i, t)| (t - i as f64 * dt).abs() <= 1e-12 * dt.max(1.0) * (i as f64 + 1.0))
    };
    if !uniform {
        return t_grid
            .iter()
            .map(|&t| {
                a.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, (tau0 + j as f64 * d_tau) * t))
                    .sum()
            })
            .collect();
    }
    let dt = t_grid[1];
    let theta = d_tau * dt;
    let n = a.len();
    let size = (n + m - 1).next_power_of_two();
    let chirp = |x: usize| Complex64::from_polar(1.0, 0.5 * theta * (x as f64) * (x as f64));
    let mut u = vec![Complex64::new(0.0, 0.0); size];
    for (j, v) in a.iter().enumerate() {
        u[j] = v * chirp(j);
    }
    // v[r] = conj chirp(r - (n - 1)) for r = 0..n+m-1
    let mut v = vec![Complex64::new(0.0, 0.0); size];
    for (r, slot) in v.iter_mut().enumerate().take(n + m - 1) {
        let lag = (r as i64 - (n as i64 - 1)).unsigned_abs() as usize;
        *slot = chirp(lag).conj();
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fwd.process(&mut u);
    fwd.process(&mut v);
    for (x, y) in u.iter_mut().zip(&v) {
        *x *= y;
    }
    inv.process(&mut u);
    let norm = 1.0 / size as f64;
    (0..m)
        .map(|mi| {
            let conv = u[mi + n - 1] * norm;
            conv * chirp(mi) * Complex64::from_polar(1.0, tau0 * mi as f64 * dt)
        })
        .collect()
}

/// Linearized density by the Green route, ρ̂_L = ρ̂_FH - Ĝ^r *_t ρ̂_FH.
#[allow(clippy::too_many_arguments)]
pub fn linear_density_green(
    init: &InitialWigner,
    w: &InteractionKernel,
    g: &VelocityProfile,
    hbar: f64,
    k: &[f64],
    dt: f64,
    t_final: f64,
    options: &GreenOptions,
) -> Result<DensityTrace> {
    check_vector(k, g.dim(), "wavevector")?;
    let n = step_count(dt, t_final)?;
    let kn = norm(k);
    let t_grid: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
    let free: Vec<Complex64> = t_grid.iter().map(|&t| free_density(init, k, t)).collect();
    let tau_max = options.resolved_tau_max(kn, hbar);
    let n_tau = options.resolved_n_tau(tau_max, t_grid[n]);
    let green = green_remainder(w, g, hbar, k, tau_max, n_tau, &t_grid)?.values;
    let values = (0..=n)
        .map(|m| {
            if m == 0 {
                return free[0];
            }
            let mut acc = (green[m] * free[0] + green[0] * free[m]) * 0.5;
            for j in 1..m {
                acc += green[m - j] * free[j];
            }
            free[m] - acc * dt
        })
        .collect();
    Ok(DensityTrace {
        k: k.to_vec(),
        dt,
        values,
        hbar,
        provenance: Provenance::Green,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(d: usize) -> VelocityProfile {
        VelocityProfile::gaussian(d, 1.0, 1.0).unwrap()
    }

    #[test]
    fn free_density_closed_form() {
        let init = InitialWigner::gaussian(1.0, 1.0, 1.0);
        let k = [0.6, -0.3];
        for t in [0.0, 0.5, 3.0] {
            let v = free_density(&init, &k, t);
            let k2 = 0.45;
            assert!((v.re - (-k2 * (1.0 + t * t)).exp()).abs() < 1e-15);
        }
        let z = free_density(&init, &[0.0, 0.0], 7.0);
        assert_eq!(z, free_density(&init, &[0.0, 0.0], 0.0));
    }

    #[test]
    fn scaled_bracket_and_mixed_data() {
        let spec: InitialSpec =
            serde_json::from_str(r#"{"kind":"bracket","power":4.0,"k_scale":2.0,"eta_scale":0.5}"#).unwrap();
        let b = InitialWigner::from_spec(1, &spec).unwrap();
        // ⟨1/2, 2⟩² = 5.25
        assert!((b.evaluate(&[1.0], &[1.0]).re - 5.25f64.powi(-2)).abs() < 1e-15);
        let m = InitialWigner::from_spec(
            2,
            &InitialSpec::Mixed {
                amplitude: 3.0,
                power: 2.0,
                k_scale: 0.5,
                eta_scale: 2.0,
            },
        )
        .unwrap();
        let v = m.evaluate(&[0.5, 0.0], &[2.0, 2.0]);
        assert!((v.re - 3.0 * (-1.0f64).exp() / 3.0).abs() < 1e-15 && v.im == 0.0);
        assert_eq!(m.scaled(2.0).evaluate(&[0.5, 0.0], &[2.0, 2.0]), v * 2.0);
        let bad = InitialSpec::Mixed {
            amplitude: 1.0,
            power: 2.0,
            k_scale: 0.0,
            eta_scale: 1.0,
        };
        assert!(matches!(InitialWigner::from_spec(2, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_values() {
        let g = gauss(1);
        let w = InteractionKernel::tabulated(1, 0.5, vec![1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = volterra_kernel(&w, &g, 1.0, 1.0, &[1.0]).unwrap();
        let expect = 2.0 * 0.5f64.sin() * (2.0 * PI).sqrt() * (-0.5f64).exp() / (2.0 * PI);
        assert!((v - expect).abs() < 1e-14);
        assert_eq!(volterra_kernel(&w, &g, 1.0, 0.0, &[1.0]).unwrap(), 0.0);
        assert_eq!(volterra_kernel(&w, &g, 1.0, 2.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn volterra_zero_kernel_returns_forcing() {
        let phi = solve_volterra(|_| 0.0, |t| Complex64::new(t.cos(), t), 0.1, 2.0).unwrap();
        for (j, v) in phi.iter().enumerate() {
            let t = j as f64 * 0.1;
            assert_eq!(*v, Complex64::new(t.cos(), t));
        }
    }

    #[test]
    fn volterra_constant_kernel_second_order() {
        // φ = 1 - c ∫ φ  ⇒  φ = e^{-ct}
        let c = 0.8;
        let err = |dt: f64| {
            let phi = solve_volterra(|_| c, |_| Complex64::new(1.0, 0.0), dt, 2.0).unwrap();
            phi.iter()
                .enumerate()
                .map(|(j, v)| (v.re - (-c * j as f64 * dt).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 1e-4);
        assert!((e1 / e2).log2() > 1.9, "order {}", (e1 / e2).log2());
    }

    #[test]
    fn tail_coefficients_match_expansion() {
        let (a2, a4, b) = (1.3, -0.7, 0.9);
        let c = tail_coefficients(a2, a4, b);
        let gap = |y: f64| {
            let lam = Complex64::new(0.0, y);
            let series: Complex64 = (0..4).map(|i| c[i] / (lam + b).powi(i as i32 + 2)).sum();
            (series - a2 / (lam * lam) - a4 / lam.powi(4)).norm()
        };
        // the mismatch starts at order six
        let order = (gap(20.0) / gap(40.0)).log2();
        assert!((order - 6.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn chirp_matches_direct_sum() {
        let a: Vec<Complex64> = (0..301).map(|j| Complex64::new((j as f64 * 0.1).sin(), 0.3)).collect();
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.07).collect();
        let fast = fourier_sum(&a, -3.0, 0.02, &t);
        let mut shifted = t.clone();
        shifted[0] = 1e-300;
        let direct = fourier_sum(&a, -3.0, 0.02, &shifted);
        for (x, y) in fast.iter().zip(&direct) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn green_trivial_cases() {
        let g = gauss(3);
        let z = InteractionKernel::zero(3).unwrap();
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let r = green_remainder(&z, &g, 1.0, &[1.0, 0.0, 0.0], 40.0, 1024, &t).unwrap();
        assert!(r.values.iter().all(|v| v.norm() == 0.0));
        let y = InteractionKernel::yukawa(1.0).unwrap();
        let r = green_remainder(&y, &g, 1.0, &[0.0, 0.0, 0.0], 40.0, 1024, &t).unwrap();
        assert!(r.values.iter().all(|v| v.norm() == 0.0));
        assert!(matches!(
            green_remainder(&y, &g, 1.0, &[1.0, 0.0, 0.0], 40.0, 1024, &[100.0]),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn green_route_zero_kernel_is_free() {
        let g = gauss(3);
        let z = InteractionKernel::zero(3).unwrap();
        let init = InitialWigner::gaussian(1.0, 1.0, 1.0);
        let k = [0.7, 0.0, 0.0];
        let tr = linear_density_green(&init, &z, &g, 1.0, &k, 0.05, 2.0, &GreenOptions::default()).unwrap();
        let fr = free_trace(&init, &k, 1.0, 0.05, 2.0).unwrap();
        assert_eq!(tr.values, fr.values);
        let vt = linear_density_volterra(&init, &z, &g, 1.0, &k, 0.05, 2.0).unwrap();
        assert_eq!(vt.values, fr.values);
    }

    #[test]
    fn dual_routes_agree() {
        let g = gauss(3);
        let y = InteractionKernel::yukawa(1.0).unwrap();
        let init = InitialWigner::gaussian(1.0, 1.0, 1.0);
        let k = [1.0, 0.0, 0.0];
        let dt = 0.01;
        let v = linear_density_volterra(&init, &y, &g, 1.0, &k, dt, 20.0).unwrap();
        let gr = linear_density_green(&init, &y, &g, 1.0, &k, dt, 20.0, &GreenOptions::default()).unwrap();
        let free = free_trace(&init, &k, 1.0, dt, 20.0).unwrap();
        let gap = v.sup_distance(&gr) / free.sup_norm();
        assert!(gap < 1e-4, "gap {gap}");
        assert_eq!(gr.values[0], free.values[0]);
    }
}
