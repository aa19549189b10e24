//! Steady-state velocity profiles and interaction kernels.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::RadialSpline;
use crate::quad::{gl20, integrate};

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn check_vector(v: &[f64], dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Domain(format!(
            "{what} has {} components, expected {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{what} is not finite")));
    }
    Ok(())
}

/// Surface area of the unit sphere in R^n.
pub(crate) fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

fn gamma(x: f64) -> f64 {
    // half-integer and integer arguments only
    let twice = (2.0 * x).round() as i64;
    if twice % 2 == 0 {
        (1..(x.round() as i64)).map(|k| k as f64).product()
    } else {
        let mut v = PI.sqrt();
        let mut a = 0.5;
        while a < x - 1e-9 {
            v *= a;
            a += 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Gaussian { beta: f64 },
    /// Radial samples g(i * spacing), i = 0..n; zero beyond the last sample.
    Tabulated { spacing: f64, values: Vec<f64> },
}

#[derive(Debug, Clone)]
enum ProfileShape {
    Gaussian { beta: f64 },
    Tabulated(Box<TabulatedProfile>),
}

#[derive(Debug, Clone)]
struct TabulatedProfile {
    radial: RadialSpline,
    fourier: RadialSpline,
    marginal: RadialSpline,
    fourier_extent: f64,
    second_moment: f64,
}

/// Radial, nonnegative steady-state profile g on R^d.
#[derive(Debug, Clone)]
pub struct VelocityProfile {
    dim: usize,
    amplitude: f64,
    shape: ProfileShape,
}

impl VelocityProfile {
    pub fn gaussian(dim: usize, beta: f64, amplitude: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("profile scale must be positive, got {beta}")));
        }
        check_amplitude(amplitude)?;
        Ok(VelocityProfile {
            dim,
            amplitude,
            shape: ProfileShape::Gaussian { beta },
        })
    }

    /// Tabulated radial profile; supported for d ≤ 3.
    pub fn tabulated(dim: usize, spacing: f64, values: Vec<f64>, amplitude: f64) -> Result<Self> {
        check_dim(dim)?;
        if dim > 3 {
            return Err(Error::Unsupported("tabulated profiles need d <= 3".into()));
        }
        check_amplitude(amplitude)?;
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("profile samples must be nonnegative".into()));
        }
        let radial = RadialSpline::new(spacing, values)?;
        let tab = TabulatedProfile::build(dim, radial)?;
        Ok(VelocityProfile {
            dim,
            amplitude,
            shape: ProfileShape::Tabulated(Box::new(tab)),
        })
    }

    pub fn from_spec(dim: usize, spec: &ProfileSpec, amplitude: f64) -> Result<Self> {
        match spec {
            ProfileSpec::Gaussian { beta } => Self::gaussian(dim, *beta, amplitude),
            ProfileSpec::Tabulated { spacing, values } => {
                Self::tabulated(dim, *spacing, values.clone(), amplitude)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.shape, ProfileShape::Gaussian { .. })
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        check_amplitude(amplitude)?;
        Ok(VelocityProfile {
            amplitude,
            ..self.clone()
        })
    }

    /// g at radius r.
    pub fn radial_value(&self, r: f64) -> f64 {
        let r = r.abs();
        match &self.shape {
            ProfileShape::Gaussian { beta } => self.amplitude * (-r * r / (2.0 * beta * beta)).exp(),
            ProfileShape::Tabulated(t) => self.amplitude * t.radial.eval(r).unwrap_or(0.0).max(0.0),
        }
    }

    pub fn value(&self, v: &[f64]) -> Result<f64> {
        check_vector(v, self.dim, "velocity")?;
        Ok(self.radial_value(norm(v)))
    }

    /// ĝ(p) = ∫ e^{-ip·v} g(v) dv.
    pub fn fourier(&self, p: &[f64]) -> Result<f64> {
        check_vector(p, self.dim, "frequency")?;
        Ok(self.fourier_radial(norm(p)))
    }

    /// ĝ as a function of |p|.
    pub fn fourier_radial(&self, s: f64) -> f64 {
        let s = s.abs();
        match &self.shape {
            ProfileShape::Gaussian { beta } => {
                let b2 = beta * beta;
                self.amplitude * (2.0 * PI * b2).powf(self.dim as f64 / 2.0) * (-b2 * s * s / 2.0).exp()
            }
            ProfileShape::Tabulated(t) => {
                if s > t.fourier_extent {
                    0.0
                } else {
                    self.amplitude * t.fourier.eval(s).unwrap_or(0.0)
                }
            }
        }
    }

    /// Frequency beyond which |ĝ| is negligible (below ~1e-16 relative for the gaussian).
    pub fn fourier_extent(&self) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => (2.0 * (1e16f64).ln()).sqrt() / beta,
            ProfileShape::Tabulated(t) => t.fourier_extent,
        }
    }

    /// Length scale on which ĝ varies.
    pub fn fourier_scale(&self) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => 1.0 / beta,
            ProfileShape::Tabulated(t) => 1.0 / t.radial.extent().max(t.radial.spacing()),
        }
    }

    /// Length scale on which g varies.
    pub fn velocity_scale(&self) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => *beta,
            ProfileShape::Tabulated(t) => (t.radial.extent() / 8.0).max(4.0 * t.radial.spacing()),
        }
    }

    /// Velocity beyond which g and its marginal are negligible.
    pub fn velocity_extent(&self) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => 9.0 * beta,
            ProfileShape::Tabulated(t) => t.radial.extent(),
        }
    }

    /// Directional marginal g_k(u) = ∫_{k⊥} g(u e + w) dw.
    pub fn marginal(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain("marginal argument is not finite".into()));
        }
        Ok(self.marginal_value(u))
    }

    pub(crate) fn marginal_value(&self, u: f64) -> f64 {
        let u = u.abs();
        match &self.shape {
            ProfileShape::Gaussian { beta } => {
                let d = self.dim as f64;
                self.amplitude
                    * (2.0 * PI).powf((d - 1.0) / 2.0)
                    * beta.powf(d - 1.0)
                    * (-u * u / (2.0 * beta * beta)).exp()
            }
            ProfileShape::Tabulated(t) => self.amplitude * t.marginal.eval(u).unwrap_or(0.0),
        }
    }

    /// g_k'(u).
    pub fn marginal_derivative(&self, u: f64) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => -u / (beta * beta) * self.marginal_value(u),
            ProfileShape::Tabulated(t) => {
                let d = t.marginal.derivative(u.abs()).unwrap_or(0.0);
                self.amplitude * d * u.signum()
            }
        }
    }

    /// ∫ u² g_k(u) du.
    pub fn marginal_second_moment(&self) -> f64 {
        match &self.shape {
            ProfileShape::Gaussian { beta } => beta * beta * self.fourier_radial(0.0),
            ProfileShape::Tabulated(t) => self.amplitude * t.second_moment,
        }
    }

    /// (2π)^{-d} ĝ(0).
    pub fn steady_density(&self) -> f64 {
        self.fourier_radial(0.0) / (2.0 * PI).powi(self.dim as i32)
    }
}

impl TabulatedProfile {
    fn build(dim: usize, radial: RadialSpline) -> Result<Self> {
        let big_r = radial.extent();
        let h = radial.spacing();
        let n = radial.samples().len();
        let r_panels = (n / 8).max(8);
        let g = |r: f64| radial.eval(r).unwrap_or(0.0);

        // marginal on a grid twice as fine as the profile table
        let du = h / 2.0;
        let n_u = ((big_r / du).round() as usize) + 1;
        let marginal_samples: Vec<f64> = (0..n_u)
            .map(|i| marginal_quadrature(dim, big_r, r_panels, i as f64 * du, &g))
            .collect();
        let marginal = RadialSpline::new(du, marginal_samples)?;

        let hankel = |s: f64| -> f64 {
            let panels = r_panels + (s * big_r / 4.0).ceil() as usize;
            match dim {
                1 => 2.0 * integrate(0.0, big_r, panels, |r| (s * r).cos() * g(r)),
                // cosine transform of the marginal equals the J0 transform of g
                2 => {
                    2.0 * integrate(0.0, big_r, panels, |u| {
                        (s * u).cos() * marginal.eval(u).unwrap_or(0.0)
                    })
                }
                _ => 4.0 * PI * integrate(0.0, big_r, panels, |r| r * r * sinc(s * r) * g(r)),
            }
        };
        let g0 = hankel(0.0);
        if !(g0 > 0.0) {
            return Err(Error::Domain("tabulated profile has zero mass".into()));
        }
        let ds = (PI / (16.0 * big_r)).min(h / 4.0);
        let s_cap = (PI / h).min(400.0 / big_r.max(1.0));
        let mut samples = Vec::new();
        let mut quiet = 0usize;
        let mut s = 0.0;
        while s <= s_cap {
            let v = hankel(s);
            samples.push(v);
            if v.abs() < 1e-13 * g0 {
                quiet += 1;
                if quiet >= 32 {
                    break;
                }
            } else {
                quiet = 0;
            }
            s += ds;
        }
        let fourier_extent = ds * (samples.len() - 1) as f64;
        let fourier = RadialSpline::new(ds, samples)?;

        let second_moment = sphere_area(dim) / dim as f64
            * integrate(0.0, big_r, r_panels, |r| r.powi(dim as i32 + 1) * g(r));

        Ok(TabulatedProfile {
            radial,
            fourier,
            marginal,
            fourier_extent,
            second_moment,
        })
    }
}

fn marginal_quadrature(dim: usize, big_r: f64, panels: usize, u: f64, g: &impl Fn(f64) -> f64) -> f64 {
    let u = u.abs();
    match dim {
        1 => g(u),
        2 => {
            if u >= big_r {
                return 0.0;
            }
            let top = (big_r * big_r - u * u).sqrt();
            2.0 * integrate(0.0, top, panels, |rho| g((u * u + rho * rho).sqrt()))
        }
        _ => {
            if u >= big_r {
                return 0.0;
            }
            2.0 * PI * integrate(u, big_r, panels, |r| r * g(r))
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    Ok(())
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Domain(format!("amplitude must be positive, got {a}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Yukawa { alpha: f64 },
    Gaussian { width: f64 },
    Zero,
    /// Radial samples of ŵ at |k| = i * spacing.
    Tabulated { spacing: f64, values: Vec<f64> },
}

#[derive(Debug, Clone)]
enum KernelShape {
    Yukawa { alpha: f64 },
    Gaussian { width: f64 },
    Zero,
    Tabulated(RadialSpline),
}

/// Two-body interaction kernel through its Fourier symbol ŵ, scaled by `coupling`.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    dim: usize,
    coupling: f64,
    shape: KernelShape,
}

impl InteractionKernel {
    pub fn yukawa(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("screening length must be positive, got {alpha}")));
        }
        Ok(InteractionKernel {
            dim: 3,
            coupling: 1.0,
            shape: KernelShape::Yukawa { alpha },
        })
    }

    pub fn gaussian(dim: usize, width: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Domain(format!("kernel width must be positive, got {width}")));
        }
        Ok(InteractionKernel {
            dim,
            coupling: 1.0,
            shape: KernelShape::Gaussian { width },
        })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(InteractionKernel {
            dim,
            coupling: 1.0,
            shape: KernelShape::Zero,
        })
    }

    pub fn tabulated(dim: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        Ok(InteractionKernel {
            dim,
            coupling: 1.0,
            shape: KernelShape::Tabulated(RadialSpline::new(spacing, values)?),
        })
    }

    pub fn from_spec(dim: usize, spec: &KernelSpec, coupling: f64) -> Result<Self> {
        let base = match spec {
            KernelSpec::Yukawa { alpha } => {
                if dim != 3 {
                    return Err(Error::Unsupported(format!(
                        "the yukawa kernel is defined for d = 3, got d = {dim}"
                    )));
                }
                Self::yukawa(*alpha)?
            }
            KernelSpec::Gaussian { width } => Self::gaussian(dim, *width)?,
            KernelSpec::Zero => Self::zero(dim)?,
            KernelSpec::Tabulated { spacing, values } => Self::tabulated(dim, *spacing, values.clone())?,
        };
        base.scaled(coupling)
    }

    /// Same kernel multiplied by `coupling` (negative flips the sign).
    pub fn scaled(&self, coupling: f64) -> Result<Self> {
        if !coupling.is_finite() {
            return Err(Error::Domain("coupling is not finite".into()));
        }
        Ok(InteractionKernel {
            coupling: self.coupling * coupling,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, KernelShape::Zero) || self.coupling == 0.0
    }

    /// ŵ(k).
    pub fn hat(&self, k: &[f64]) -> Result<f64> {
        check_vector(k, self.dim, "wavevector")?;
        self.hat_radial(norm(k))
    }

    /// ŵ as a function of |k|.
    pub fn hat_radial(&self, s: f64) -> Result<f64> {
        let s = s.abs();
        let base = match &self.shape {
            KernelShape::Yukawa { alpha } => 4.0 * PI / (s * s + alpha * alpha),
            KernelShape::Gaussian { width } => {
                let a2 = width * width;
                (2.0 * PI * a2).powf(self.dim as f64 / 2.0) * (-a2 * s * s / 2.0).exp()
            }
            KernelShape::Zero => 0.0,
            KernelShape::Tabulated(t) => t.eval(s).ok_or_else(|| {
                Error::Range(format!("|k| = {s} outside kernel table [0, {}]", t.extent()))
            })?,
        };
        Ok(self.coupling * base)
    }

    /// Bound on sup |ŵ| (the L¹ norm of w for the closed-form kinds).
    pub fn l1_norm_bound(&self) -> f64 {
        let base = match &self.shape {
            KernelShape::Yukawa { alpha } => 4.0 * PI / (alpha * alpha),
            KernelShape::Gaussian { width } => (2.0 * PI * width * width).powf(self.dim as f64 / 2.0),
            KernelShape::Zero => 0.0,
            KernelShape::Tabulated(t) => {
                // spline overshoot between nodes is bounded by sampling finely
                let n = t.samples().len() * 8;
                let h = t.extent() / n as f64;
                (0..=n)
                    .map(|i| t.eval(i as f64 * h).unwrap_or(0.0).abs())
                    .fold(0.0, f64::max)
            }
        };
        self.coupling.abs() * base
    }

    /// Largest |k| at which ŵ is defined.
    pub fn extent(&self) -> f64 {
        match &self.shape {
            KernelShape::Tabulated(t) => t.extent(),
            _ => f64::INFINITY,
        }
    }

    /// Sampled sup of ⟨k⟩^{M-1/2}|ŵ(k)| over |k| ≤ k_max, M = ⌈(d+1)/2⌉.
    pub fn decay_certificate(&self, k_max: f64, samples: usize) -> Result<f64> {
        let m = (self.dim + 2) / 2;
        let p = m as f64 - 0.5;
        let top = k_max.min(self.extent());
        let mut sup = 0.0f64;
        for i in 0..=samples {
            let s = top * i as f64 / samples as f64;
            let v = (1.0 + s * s).powf(p / 2.0) * self.hat_radial(s)?.abs();
            sup = sup.max(v);
        }
        Ok(sup)
    }
}

/// Integral kernel of the steady state, γ_g(x, y) = (2π)^{-d} ĝ((y - x)/ħ).
pub fn steady_state_kernel(g: &VelocityProfile, hbar: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(hbar > 0.0) {
        return Err(Error::Domain("the operator kernel needs hbar > 0".into()));
    }
    check_vector(x, g.dim(), "x")?;
    check_vector(y, g.dim(), "y")?;
    let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| (a - b) / hbar).collect();
    Ok(g.fourier_radial(norm(&diff)) / (2.0 * PI).powi(g.dim() as i32))
}

/// Wigner transform W[Q](x, ξ) of an operator kernel by tensor Gauss–Legendre quadrature
/// over y ∈ [-half_width, half_width]^d.
pub fn wigner_transform(
    kernel: impl Fn(&[f64], &[f64]) -> Complex64,
    dim: usize,
    hbar: f64,
    x: &[f64],
    xi: &[f64],
    half_width: f64,
    panels: usize,
) -> Result<Complex64> {
    if !(hbar > 0.0) {
        return Err(Error::Domain("the Wigner transform needs hbar > 0".into()));
    }
    check_vector(x, dim, "x")?;
    check_vector(xi, dim, "xi")?;
    let rule = gl20();
    let h = 2.0 * half_width / panels as f64;
    let mut nodes = Vec::with_capacity(panels * rule.len());
    for p in 0..panels {
        let mid = -half_width + h * (p as f64 + 0.5);
        for (t, w) in rule.nodes.iter().zip(&rule.weights) {
            nodes.push((mid + 0.5 * h * t, 0.5 * h * w));
        }
    }
    let n = nodes.len();
    let total = n.pow(dim as u32);
    let mut idx = vec![0usize; dim];
    let mut y = vec![0.0; dim];
    let mut plus = vec![0.0; dim];
    let mut minus = vec![0.0; dim];
    let mut acc = Complex64::new(0.0, 0.0);
    for lin in 0..total {
        let mut rem = lin;
        for a in (0..dim).rev() {
            idx[a] = rem % n;
            rem /= n;
        }
        let mut weight = 1.0;
        let mut phase = 0.0;
        for a in 0..dim {
            let (ya, wa) = nodes[idx[a]];
            y[a] = ya;
            weight *= wa;
            phase -= xi[a] * ya / hbar;
            plus[a] = x[a] + ya / 2.0;
            minus[a] = x[a] - ya / 2.0;
        }
        acc += kernel(&plus, &minus) * Complex64::from_polar(weight, phase);
    }
    Ok(acc / ((2.0 * PI).powi(dim as i32) * hbar.powi(dim as i32)))
}
