//! Conjugated Fourier–Wigner evolution on a truncated (k, η) grid.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    bootstrap_monitors, weighted_norm_between, MonitorParams, MonitorSeries, NormParams, WeightMode,
};
use crate::error::{Error, Result};
use crate::interp::{bspline_weights, BSplinePrefilter};
use crate::kernels::{InteractionKernel, KernelSpec, ProfileSpec, VelocityProfile};
use crate::linear::{DensityTrace, InitialWigner, Provenance};
use crate::penrose::quick_check;

pub const MAX_DIM: usize = 3;
type Idx = [usize; MAX_DIM];

/// Zero-padding of spline coefficient blocks, in grid points per side.
const SPLINE_PAD: usize = 8;
/// Extra coefficient points kept around the significant part of a row.
const SPLINE_HALO: usize = 3;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn unravel(mut lin: usize, len: usize, dim: usize) -> Idx {
    let mut idx = [0; MAX_DIM];
    for a in (0..dim).rev() {
        idx[a] = lin % len;
        lin /= len;
    }
    idx
}

fn ravel(idx: &Idx, len: usize, dim: usize) -> usize {
    idx[..dim].iter().fold(0, |acc, &i| acc * len + i)
}

/// Uniform symmetric grid {(i - half) * spacing : i = 0..2 half}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub half: usize,
    pub spacing: f64,
}

impl Axis {
    pub fn new(half: usize, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        Ok(Axis { half, spacing })
    }

    /// Axis with the given extent, which must be a whole number of spacings.
    pub fn from_extent(extent: f64, spacing: f64) -> Result<Self> {
        if !(extent > 0.0 && spacing > 0.0 && extent.is_finite() && spacing.is_finite()) {
            return Err(Error::Config(format!(
                "grid extent {extent} and spacing {spacing} must be positive"
            )));
        }
        let ratio = extent / spacing;
        let half = ratio.round();
        if (ratio - half).abs() > 1e-9 * ratio.max(1.0) || half < 1.0 {
            return Err(Error::Config(format!(
                "extent {extent} is not a whole multiple of spacing {spacing}"
            )));
        }
        Ok(Axis {
            half: half as usize,
            spacing,
        })
    }

    pub fn len(&self) -> usize {
        2 * self.half + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.half as f64) * self.spacing
    }

    pub fn extent(&self) -> f64 {
        self.half as f64 * self.spacing
    }

    pub fn index_of(&self, x: f64) -> Option<usize> {
        let pos = x / self.spacing + self.half as f64;
        let i = pos.round();
        if (pos - i).abs() > 1e-9 || i < 0.0 || i >= self.len() as f64 {
            return None;
        }
        Some(i as usize)
    }
}

/// Ŵ[P](t, k, η) on a (k, η) grid; the value at (k_lin, η_lin) sits at k_lin * n_eta + η_lin.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    dim: usize,
    k_axis: Axis,
    eta_axis: Axis,
    pub values: Vec<Complex64>,
    pub hbar: f64,
    pub time: f64,
}

impl WignerField {
    pub fn zeros(dim: usize, k_axis: Axis, eta_axis: Axis, hbar: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !(0.0..=1.0).contains(&hbar) {
            return Err(Error::Config(format!("hbar must lie in [0, 1], got {hbar}")));
        }
        let n = k_axis.len().pow(dim as u32) * eta_axis.len().pow(dim as u32);
        Ok(WignerField {
            dim,
            k_axis,
            eta_axis,
            values: vec![zero(); n],
            hbar,
            time: 0.0,
        })
    }

    pub fn from_fn(
        dim: usize,
        k_axis: Axis,
        eta_axis: Axis,
        hbar: f64,
        f: impl Fn(&[f64], &[f64]) -> Complex64 + Sync,
    ) -> Result<Self> {
        let mut field = Self::zeros(dim, k_axis, eta_axis, hbar)?;
        let n_eta = field.n_eta();
        let geometry = field.clone_geometry();
        field
            .values
            .par_chunks_mut(n_eta)
            .enumerate()
            .for_each(|(kl, row)| {
                let k = geometry.k_point(kl);
                for (el, v) in row.iter_mut().enumerate() {
                    *v = f(&k, &geometry.eta_point(el));
                }
            });
        Ok(field)
    }

    fn clone_geometry(&self) -> WignerField {
        WignerField {
            values: Vec::new(),
            ..*self
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_axis(&self) -> Axis {
        self.k_axis
    }

    pub fn eta_axis(&self) -> Axis {
        self.eta_axis
    }

    /// Number of k grid points.
    pub fn n_k(&self) -> usize {
        self.k_axis.len().pow(self.dim as u32)
    }

    /// Number of η grid points per k.
    pub fn n_eta(&self) -> usize {
        self.eta_axis.len().pow(self.dim as u32)
    }

    pub fn k_point(&self, k_lin: usize) -> Vec<f64> {
        let idx = unravel(k_lin, self.k_axis.len(), self.dim);
        idx[..self.dim].iter().map(|&i| self.k_axis.coord(i)).collect()
    }

    pub fn eta_point(&self, eta_lin: usize) -> Vec<f64> {
        let idx = unravel(eta_lin, self.eta_axis.len(), self.dim);
        idx[..self.dim].iter().map(|&i| self.eta_axis.coord(i)).collect()
    }

    pub fn k_points(&self) -> Vec<Vec<f64>> {
        (0..self.n_k()).map(|i| self.k_point(i)).collect()
    }

    /// Linear index of a k that lies on the grid.
    pub fn k_index(&self, k: &[f64]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let mut idx = [0; MAX_DIM];
        for (a, &x) in k.iter().enumerate() {
            idx[a] = self.k_axis.index_of(x)?;
        }
        Some(ravel(&idx, self.k_axis.len(), self.dim))
    }

    /// Linear index of the origin in k (or η).
    pub fn center_k(&self) -> usize {
        (self.n_k() - 1) / 2
    }

    pub fn center_eta(&self) -> usize {
        (self.n_eta() - 1) / 2
    }

    pub fn row(&self, k_lin: usize) -> &[Complex64] {
        let n = self.n_eta();
        &self.values[k_lin * n..(k_lin + 1) * n]
    }

    pub fn same_grid(&self, other: &WignerField) -> bool {
        self.dim == other.dim && self.k_axis == other.k_axis && self.eta_axis == other.eta_axis
    }

    pub fn max_abs(&self) -> f64 {
        self.values.par_iter().map(|v| v.norm()).reduce(|| 0.0, f64::max)
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.par_iter_mut().for_each(|v| *v *= factor);
    }

    /// Largest |Ŵ| on the outermost shell of the grid in k or η.
    pub fn boundary_max(&self) -> f64 {
        let (lk, le) = (self.k_axis.len(), self.eta_axis.len());
        let n_eta = self.n_eta();
        let d = self.dim;
        self.values
            .par_chunks(n_eta)
            .enumerate()
            .map(|(kl, row)| {
                let ki = unravel(kl, lk, d);
                let k_edge = ki[..d].iter().any(|&i| i == 0 || i == lk - 1);
                row.iter()
                    .enumerate()
                    .filter(|(el, _)| {
                        k_edge || {
                            let ei = unravel(*el, le, d);
                            ei[..d].iter().any(|&i| i == 0 || i == le - 1)
                        }
                    })
                    .map(|(_, v)| v.norm())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// max |Ŵ(k, η) - conj Ŵ(-k, -η)|.
    pub fn asymmetry(&self) -> f64 {
        let n = self.values.len();
        self.values
            .par_iter()
            .enumerate()
            .map(|(i, v)| (v - self.values[n - 1 - i].conj()).norm())
            .reduce(|| 0.0, f64::max)
    }

    /// Average each value with the conjugate of its mirror image.
    pub fn symmetrize(&mut self) {
        let n = self.values.len();
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let avg = 0.5 * (self.values[i] + self.values[j].conj());
            self.values[i] = avg;
            self.values[j] = avg.conj();
        }
        if n % 2 == 1 {
            let c = &mut self.values[n / 2];
            c.im = 0.0;
        }
    }

    /// Value at an on-grid k and arbitrary η (cubic spline in η); zero off the k grid or outside the box.
    pub fn interpolate(&self, k: &[f64], eta: &[f64]) -> Complex64 {
        let Some(kl) = self.k_index(k) else {
            return zero();
        };
        let pf = BSplinePrefilter::new(self.eta_axis.len(), SPLINE_PAD);
        let block = row_coefficients(self.row(kl), self.dim, &pf);
        let mut pos = [0.0; MAX_DIM];
        for a in 0..self.dim {
            pos[a] = eta[a] / self.eta_axis.spacing + self.eta_axis.half as f64;
        }
        eval_block(&block, self.dim, pf.coeff_len(), SPLINE_PAD, &pos)
    }
}

/// Interpolating cubic B-spline coefficients of one η row, zero-padded by `pf.pad()` per side.
fn row_coefficients(row: &[Complex64], dim: usize, pf: &BSplinePrefilter) -> Vec<Complex64> {
    let n = pf.data_len();
    let np = pf.coeff_len();
    let pad = pf.pad();
    let mut block = vec![zero(); np.pow(dim as u32)];
    for (el, v) in row.iter().enumerate() {
        let mut idx = unravel(el, n, dim);
        for i in idx.iter_mut().take(dim) {
            *i += pad;
        }
        block[ravel(&idx, np, dim)] = *v;
    }
    prefilter_block(&mut block, dim, pf);
    block
}

fn prefilter_block(block: &mut [Complex64], dim: usize, pf: &BSplinePrefilter) {
    let np = pf.coeff_len();
    for a in 0..dim {
        let stride = np.pow((dim - 1 - a) as u32);
        let outer = np.pow(a as u32);
        for o in 0..outer {
            for i in 0..stride {
                pf.solve_strided(block, o * np * stride + i, stride);
            }
        }
    }
}

/// Evaluate a coefficient block at a position in data index units.
fn eval_block(block: &[Complex64], dim: usize, np: usize, pad: usize, pos: &[f64; MAX_DIM]) -> Complex64 {
    let mut base = [0isize; MAX_DIM];
    let mut w = [[0.0; 4]; MAX_DIM];
    for a in 0..dim {
        let x = pos[a] + pad as f64;
        let b = x.floor();
        base[a] = b as isize - 1;
        w[a] = bspline_weights(x - b);
    }
    let mut acc = zero();
    for combo in 0..4usize.pow(dim as u32) {
        let mut lin = 0usize;
        let mut weight = 1.0;
        let mut ok = true;
        let mut c = combo;
        for a in 0..dim {
            let t = c % 4;
            c /= 4;
            let i = base[a] + t as isize;
            if i < 0 || i >= np as isize {
                ok = false;
                break;
            }
            lin = lin * np + i as usize;
            weight *= w[a][t];
        }
        if ok {
            acc += block[lin] * weight;
        }
    }
    acc
}

type Window = [(usize, usize); MAX_DIM];

/// Spline coefficients of every row with the window where each row is significant.
struct SplineRows {
    np: usize,
    block: usize,
    coeffs: Vec<Complex64>,
    /// Significant coefficient window per row, in padded coordinates (half-open).
    windows: Vec<Option<Window>>,
    row_max: Vec<f64>,
}

impl SplineRows {
    fn build(field: &WignerField, pf: &BSplinePrefilter, tolerance: f64) -> Self {
        let dim = field.dim;
        let np = pf.coeff_len();
        let block = np.pow(dim as u32);
        let n_eta_axis = field.eta_axis.len();
        let global = field.max_abs();
        let cutoff = tolerance * global;
        let mut coeffs = vec![zero(); field.n_k() * block];
        let results: Vec<(Option<Window>, f64)> = coeffs
            .par_chunks_mut(block)
            .enumerate()
            .map(|(kl, out)| {
                let row = field.row(kl);
                let row_max = row.iter().map(|v| v.norm()).fold(0.0, f64::max);
                if row_max == 0.0 || row_max <= cutoff {
                    return (None, row_max);
                }
                let mut lo = [usize::MAX; MAX_DIM];
                let mut hi = [0usize; MAX_DIM];
                for (el, v) in row.iter().enumerate() {
                    let idx = unravel(el, n_eta_axis, dim);
                    if v.norm() > cutoff {
                        for a in 0..dim {
                            lo[a] = lo[a].min(idx[a]);
                            hi[a] = hi[a].max(idx[a]);
                        }
                    }
                    let mut p = idx;
                    for i in p.iter_mut().take(dim) {
                        *i += SPLINE_PAD;
                    }
                    out[ravel(&p, np, dim)] = *v;
                }
                prefilter_block(out, dim, pf);
                let mut win = [(0, 0); MAX_DIM];
                for a in 0..dim {
                    let l = (lo[a] + SPLINE_PAD).saturating_sub(SPLINE_HALO);
                    let h = (hi[a] + SPLINE_PAD + SPLINE_HALO + 1).min(np);
                    win[a] = (l, h);
                }
                (Some(win), row_max)
            })
            .collect();
        let (windows, row_max) = results.into_iter().unzip();
        SplineRows {
            np,
            block,
            coeffs,
            windows,
            row_max,
        }
    }

    fn row(&self, kl: usize) -> &[Complex64] {
        &self.coeffs[kl * self.block..(kl + 1) * self.block]
    }
}

/// Data-grid range reached by shifting a padded coefficient range by `offset` points.
fn target_range(src: (usize, usize), offset: isize, n_data: usize) -> Option<(usize, usize)> {
    let pad = SPLINE_PAD as isize;
    let lo = (src.0 as isize - pad - offset - 2).max(0);
    let hi = (src.1 as isize - pad - offset + 2).min(n_data as isize);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// Copy a window of a coefficient block into `out`, row-major with extents `src[a].1 - src[a].0`.
fn gather(coeffs: &[Complex64], dim: usize, np: usize, src: &Window, out: &mut Vec<Complex64>) {
    let mut ext = [1usize; MAX_DIM];
    for a in 0..dim {
        ext[a] = src[a].1 - src[a].0;
    }
    let run = ext[dim - 1];
    let runs: usize = ext[..dim - 1].iter().product();
    out.clear();
    out.reserve(runs * run);
    let mut idx = [0usize; MAX_DIM];
    for _ in 0..runs {
        let mut gl = 0usize;
        for a in 0..dim - 1 {
            gl = gl * np + idx[a] + src[a].0;
        }
        gl = gl * np + src[dim - 1].0;
        out.extend_from_slice(&coeffs[gl..gl + run]);
        for a in (0..dim - 1).rev() {
            idx[a] += 1;
            if idx[a] < ext[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Resample one axis of a local block: out[.., j, ..] = Σ_t w_t in[.., j + pad + offset - 1 + t - src_lo, ..]
/// for j in `target`; updates `ext[axis]`.
#[allow(clippy::too_many_arguments)]
fn pass_axis(
    input: &[Complex64],
    ext: &mut [usize; MAX_DIM],
    dim: usize,
    axis: usize,
    src_lo: usize,
    target: (usize, usize),
    offset: isize,
    w: &[f64; 4],
    out: &mut Vec<Complex64>,
) {
    let n_in = ext[axis];
    let n_out = target.1 - target.0;
    let outer: usize = ext[..axis].iter().product();
    let inner: usize = ext[axis + 1..dim].iter().product();
    out.clear();
    out.resize(outer * n_out * inner, zero());
    let shift = SPLINE_PAD as isize + offset - 1 - src_lo as isize;
    for o in 0..outer {
        let block_in = &input[o * n_in * inner..(o + 1) * n_in * inner];
        let block_out = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for jo in 0..n_out {
            let first = (target.0 + jo) as isize + shift;
            let dst = &mut block_out[jo * inner..(jo + 1) * inner];
            if inner == 1 && first >= 0 && first + 4 <= n_in as isize {
                let f = first as usize;
                dst[0] = block_in[f] * w[0] + block_in[f + 1] * w[1] + block_in[f + 2] * w[2] + block_in[f + 3] * w[3];
                continue;
            }
            for (t, wt) in w.iter().enumerate() {
                let s = first + t as isize;
                if s < 0 || s >= n_in as isize || *wt == 0.0 {
                    continue;
                }
                let from = &block_in[s as usize * inner..(s as usize + 1) * inner];
                for (d, v) in dst.iter_mut().zip(from) {
                    *d += v * wt;
                }
            }
        }
    }
    ext[axis] = n_out;
}

#[cfg(test)]
struct ShiftBuffers {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
}

/// Shift a coefficient window by a constant η offset and resample on the data grid.
/// Returns the target window (data coordinates) and fills `bufs.a` with the values there.
#[cfg(test)]
#[allow(clippy::too_many_arguments)]
fn shift_window(
    coeffs: &[Complex64],
    dim: usize,
    np: usize,
    n_data: usize,
    src: &Window,
    offset: &[isize; MAX_DIM],
    weights: &[[f64; 4]; MAX_DIM],
    bufs: &mut ShiftBuffers,
) -> Option<Window> {
    let mut target = [(0usize, 0usize); MAX_DIM];
    for a in 0..dim {
        target[a] = target_range(src[a], offset[a], n_data)?;
    }
    gather(coeffs, dim, np, src, &mut bufs.a);
    let mut ext = [1usize; MAX_DIM];
    for a in 0..dim {
        ext[a] = src[a].1 - src[a].0;
    }
    for a in 0..dim {
        pass_axis(&bufs.a, &mut ext, dim, a, src[a].0, target[a], offset[a], &weights[a], &mut bufs.b);
        std::mem::swap(&mut bufs.a, &mut bufs.b);
    }
    Some(target)
}

/// Fixed ingredients of the right-hand side: kernel samples, profile, phases.
pub struct Dynamics {
    dim: usize,
    hbar: f64,
    k_axis: Axis,
    eta_axis: Axis,
    w_hat: Vec<f64>,
    profile: VelocityProfile,
    prefilter: BSplinePrefilter,
    pair_tolerance: f64,
    linear_only: bool,
    /// e^{i ħ k_i η_j / 2} per axis, indexed [k_i][η_j].
    half_phase: Vec<Complex64>,
}

impl Dynamics {
    pub fn new(
        field: &WignerField,
        w: &InteractionKernel,
        g: &VelocityProfile,
        pair_tolerance: f64,
    ) -> Result<Self> {
        if w.dim() != field.dim || g.dim() != field.dim {
            return Err(Error::Config("kernel, profile and field dimensions differ".into()));
        }
        if !(0.0..1.0).contains(&pair_tolerance) {
            return Err(Error::Config("pair tolerance must lie in [0, 1)".into()));
        }
        let w_hat = (0..field.n_k())
            .map(|kl| w.hat(&field.k_point(kl)))
            .collect::<Result<Vec<_>>>()?;
        let (lk, le) = (field.k_axis.len(), field.eta_axis.len());
        let mut half_phase = Vec::with_capacity(lk * le);
        for i in 0..lk {
            for j in 0..le {
                let ph = 0.5 * field.hbar * field.k_axis.coord(i) * field.eta_axis.coord(j);
                half_phase.push(Complex64::from_polar(1.0, ph));
            }
        }
        Ok(Dynamics {
            dim: field.dim,
            hbar: field.hbar,
            k_axis: field.k_axis,
            eta_axis: field.eta_axis,
            w_hat,
            profile: g.clone(),
            prefilter: BSplinePrefilter::new(field.eta_axis.len(), SPLINE_PAD),
            pair_tolerance,
            linear_only: false,
            half_phase,
        })
    }

    /// Drop the quadratic term from the right-hand side.
    pub fn linearized(mut self) -> Self {
        self.linear_only = true;
        self
    }

    fn check(&self, field: &WignerField) -> Result<()> {
        if field.dim != self.dim
            || field.k_axis != self.k_axis
            || field.eta_axis != self.eta_axis
            || field.hbar != self.hbar
        {
            return Err(Error::Config("field grid does not match the dynamics".into()));
        }
        Ok(())
    }

    /// (2/ħ) sin(ħx/2), or x at ħ = 0.
    fn sine(&self, x: f64) -> f64 {
        if self.hbar > 0.0 {
            2.0 / self.hbar * (0.5 * self.hbar * x).sin()
        } else {
            x
        }
    }

    fn slice_position(&self, k: &[f64], t: f64) -> Option<[f64; MAX_DIM]> {
        let mut pos = [0.0; MAX_DIM];
        let top = self.eta_axis.extent() * (1.0 + 1e-12);
        for a in 0..self.dim {
            let eta = k[a] * t;
            if eta.abs() > top {
                return None;
            }
            pos[a] = eta / self.eta_axis.spacing + self.eta_axis.half as f64;
        }
        Some(pos)
    }

    fn slice_from(&self, rows: &SplineRows, field: &WignerField) -> Vec<Option<Complex64>> {
        (0..field.n_k())
            .into_par_iter()
            .map(|kl| {
                let k = field.k_point(kl);
                let pos = self.slice_position(&k, field.time)?;
                Some(eval_block(rows.row(kl), self.dim, rows.np, SPLINE_PAD, &pos))
            })
            .collect()
    }

    /// ρ̂_Q(t, k) = Ŵ[P](t, k, kt) for every grid k; `None` where kt leaves the η box.
    pub fn density_slice(&self, field: &WignerField) -> Result<Vec<Option<Complex64>>> {
        self.check(field)?;
        let rows = SplineRows::build(field, &self.prefilter, 0.0);
        Ok(self.slice_from(&rows, field))
    }

    /// ∂_t Ŵ[P] on the grid.
    pub fn rhs(&self, field: &WignerField) -> Result<Vec<Complex64>> {
        self.check(field)?;
        let d = self.dim;
        let t = field.time;
        let n_eta = field.n_eta();
        let (lk, le) = (self.k_axis.len(), self.eta_axis.len());
        let c = (2.0 * PI).powi(-(d as i32));
        let mut out = vec![zero(); field.values.len()];
        if self.w_hat.iter().all(|w| *w == 0.0) {
            return Ok(out);
        }
        let rows = SplineRows::build(field, &self.prefilter, self.pair_tolerance);
        let rho = self.slice_from(&rows, field);
        let a: Vec<Complex64> = rho
            .iter()
            .zip(&self.w_hat)
            .map(|(r, w)| r.unwrap_or_else(zero) * *w)
            .collect();
        // only rows up to the center are computed; the rest follow from conjugate symmetry
        let n_rows = field.center_k() + 1;
        let k_coords: Vec<[f64; MAX_DIM]> = (0..field.n_k())
            .map(|kl| {
                let idx = unravel(kl, lk, d);
                let mut x = [0.0; MAX_DIM];
                for i in 0..d {
                    x[i] = self.k_axis.coord(idx[i]);
                }
                x
            })
            .collect();
        let eta_coord: Vec<f64> = (0..le).map(|j| self.eta_axis.coord(j)).collect();

        // linear part
        out[..n_rows * n_eta]
            .par_chunks_mut(n_eta)
            .enumerate()
            .for_each(|(kl, row)| {
                if a[kl] == zero() {
                    return;
                }
                let k = &k_coords[kl];
                let mut ei = [0usize; MAX_DIM];
                for slot in row.iter_mut() {
                    let mut dot = 0.0;
                    let mut p2 = 0.0;
                    for i in 0..d {
                        let p = eta_coord[ei[i]] - k[i] * t;
                        dot += k[i] * p;
                        p2 += p * p;
                    }
                    *slot = -a[kl] * (c * self.sine(dot) * self.profile.fourier_radial(p2.sqrt()));
                    for i in (0..d).rev() {
                        ei[i] += 1;
                        if ei[i] < le {
                            break;
                        }
                        ei[i] = 0;
                    }
                }
            });

        // nonlinear part: Σ_ℓ a_ℓ S(ℓ·(η - kt)) Ŵ(k - ℓ, η - ℓt), looped over slabs of fixed first k index
        let a_max = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let r_max = rows.row_max.iter().copied().fold(0.0, f64::max);
        let threshold = self.pair_tolerance * a_max * r_max;
        let cell = self.k_axis.spacing.powi(d as i32);
        // η shift of a mode along one axis depends only on that coordinate
        let axis_shift: Vec<(isize, [f64; 4])> = (0..lk)
            .map(|i| {
                let x = -self.k_axis.coord(i) * t / self.eta_axis.spacing;
                let b = x.floor();
                (b as isize, bspline_weights(x - b))
            })
            .collect();
        let active: Vec<bool> = a.iter().map(|v| *v != zero() && v.norm() * r_max > threshold).collect();
        let slab_rows = lk.pow(d as u32 - 1);
        let mut best_in_slab = vec![0.0f64; lk];
        for (ll, v) in a.iter().enumerate() {
            let i0 = ll / slab_rows;
            best_in_slab[i0] = best_in_slab[i0].max(v.norm());
        }
        let half = self.k_axis.half as isize;
        let quantum = self.hbar > 0.0;
        let n_slabs = if self.linear_only { 0 } else { self.k_axis.half + 1 };
        struct Work {
            gathered: Vec<Complex64>,
            first: Vec<Complex64>,
            a: Vec<Complex64>,
            b: Vec<Complex64>,
        }
        out[..n_slabs * slab_rows * n_eta]
            .par_chunks_mut(slab_rows * n_eta)
            .enumerate()
            .for_each_init(
                || Work {
                    gathered: Vec::new(),
                    first: Vec::new(),
                    a: Vec::new(),
                    b: Vec::new(),
                },
                |work, (k0, slab)| {
                    for ml in 0..field.n_k() {
                        let m_idx = unravel(ml, lk, d);
                        let l0 = k0 as isize - m_idx[0] as isize + half;
                        if l0 < 0 || l0 >= lk as isize {
                            continue;
                        }
                        let l0 = l0 as usize;
                        let Some(src) = rows.windows[ml] else {
                            continue;
                        };
                        if best_in_slab[l0] * rows.row_max[ml] <= threshold {
                            continue;
                        }
                        let (off0, w0) = axis_shift[l0];
                        let Some(t0) = target_range(src[0], off0, le) else {
                            continue;
                        };
                        gather(rows.row(ml), d, rows.np, &src, &mut work.gathered);
                        let mut ext0 = [1usize; MAX_DIM];
                        for i in 0..d {
                            ext0[i] = src[i].1 - src[i].0;
                        }
                        pass_axis(&work.gathered, &mut ext0, d, 0, src[0].0, t0, off0, &w0, &mut work.first);
                        for kr in 0..slab_rows {
                            let kl = k0 * slab_rows + kr;
                            let k_idx = unravel(kl, lk, d);
                            let mut l_idx = [0usize; MAX_DIM];
                            l_idx[0] = l0;
                            let mut ok = true;
                            for i in 1..d {
                                let l = k_idx[i] as isize - m_idx[i] as isize + half;
                                if l < 0 || l >= lk as isize {
                                    ok = false;
                                    break;
                                }
                                l_idx[i] = l as usize;
                            }
                            if !ok {
                                continue;
                            }
                            let ll = ravel(&l_idx, lk, d);
                            if !active[ll] || a[ll].norm() * rows.row_max[ml] <= threshold {
                                continue;
                            }
                            let mut target = [(0usize, 0usize); MAX_DIM];
                            target[0] = t0;
                            for i in 1..d {
                                match target_range(src[i], axis_shift[l_idx[i]].0, le) {
                                    Some(r) => target[i] = r,
                                    None => {
                                        ok = false;
                                        break;
                                    }
                                }
                            }
                            if !ok {
                                continue;
                            }
                            let mut ext = ext0;
                            let values: &[Complex64] = if d == 1 {
                                &work.first
                            } else {
                                let (off, w) = axis_shift[l_idx[1]];
                                pass_axis(&work.first, &mut ext, d, 1, src[1].0, target[1], off, &w, &mut work.a);
                                for i in 2..d {
                                    let (off, w) = axis_shift[l_idx[i]];
                                    pass_axis(&work.a, &mut ext, d, i, src[i].0, target[i], off, &w, &mut work.b);
                                    std::mem::swap(&mut work.a, &mut work.b);
                                }
                                &work.a
                            };
                            let row = &mut slab[kr * n_eta..(kr + 1) * n_eta];
                            let ell = &k_coords[ll];
                            let k = &k_coords[kl];
                            let coef = -a[ll] * (c * cell);
                            let lk_dot: f64 = (0..d).map(|i| ell[i] * k[i]).sum::<f64>() * t;
                            let rot = Complex64::from_polar(1.0, -0.5 * self.hbar * lk_dot);
                            // accumulate run by run along the last axis
                            let last = d - 1;
                            let run = target[last].1 - target[last].0;
                            let runs: usize = (0..last).map(|i| target[i].1 - target[i].0).product();
                            let last_phase = &self.half_phase[l_idx[last] * le..(l_idx[last] + 1) * le];
                            let mut gi = [0usize; MAX_DIM];
                            for i in 0..last {
                                gi[i] = target[i].0;
                            }
                            for r in 0..runs {
                                let mut base = 0usize;
                                for i in 0..last {
                                    base = base * le + gi[i];
                                }
                                let base = base * le;
                                let local = &values[r * run..(r + 1) * run];
                                let dst = &mut row[base + target[last].0..base + target[last].1];
                                if quantum {
                                    let mut q = rot;
                                    for i in 0..last {
                                        q *= self.half_phase[l_idx[i] * le + gi[i]];
                                    }
                                    let q = q * (2.0 / self.hbar);
                                    let ph = &last_phase[target[last].0..target[last].1];
                                    for ((slot, v), e) in dst.iter_mut().zip(local).zip(ph) {
                                        let s = q.re * e.im + q.im * e.re;
                                        *slot += coef * (v * s);
                                    }
                                } else {
                                    let mut c0 = -lk_dot;
                                    for i in 0..last {
                                        c0 += ell[i] * eta_coord[gi[i]];
                                    }
                                    let el = ell[last];
                                    let etas = &eta_coord[target[last].0..target[last].1];
                                    for ((slot, v), e) in dst.iter_mut().zip(local).zip(etas) {
                                        *slot += coef * (v * (c0 + el * e));
                                    }
                                }
                                for i in (0..last).rev() {
                                    gi[i] += 1;
                                    if gi[i] < target[i].1 {
                                        break;
                                    }
                                    gi[i] = target[i].0;
                                }
                            }
                        }
                    }
                },
            );
        let total = out.len();
        for i in n_rows * n_eta..total {
            out[i] = out[total - 1 - i].conj();
        }
        for (i, v) in out.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                let n_eta = field.n_eta();
                return Err(Error::numerical(
                    format!(
                        "non-finite right-hand side at k = {:?}, eta = {:?}",
                        field.k_point(i / n_eta),
                        field.eta_point(i % n_eta)
                    ),
                    f64::NAN,
                ));
            }
        }
        Ok(out)
    }

    /// Classical RK4 step followed by conjugate re-symmetrization.
    /// Returns the relative asymmetry measured before re-symmetrizing.
    pub fn step_rk4(&self, field: &mut WignerField, dt: f64) -> Result<f64> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let t0 = field.time;
        let mut stage = field.clone();
        let k1 = self.rhs(field)?;
        let mut acc = k1.clone();
        let advance = |stage: &mut WignerField, base: &[Complex64], k: &[Complex64], h: f64, t: f64| {
            stage
                .values
                .par_iter_mut()
                .zip(base.par_iter().zip(k.par_iter()))
                .for_each(|(s, (b, kv))| *s = b + kv * h);
            stage.time = t;
        };
        advance(&mut stage, &field.values, &k1, 0.5 * dt, t0 + 0.5 * dt);
        drop(k1);
        let k2 = self.rhs(&stage)?;
        acc.par_iter_mut().zip(k2.par_iter()).for_each(|(x, y)| *x += y * 2.0);
        advance(&mut stage, &field.values, &k2, 0.5 * dt, t0 + 0.5 * dt);
        drop(k2);
        let k3 = self.rhs(&stage)?;
        acc.par_iter_mut().zip(k3.par_iter()).for_each(|(x, y)| *x += y * 2.0);
        advance(&mut stage, &field.values, &k3, dt, t0 + dt);
        drop(k3);
        let k4 = self.rhs(&stage)?;
        drop(stage);
        field
            .values
            .par_iter_mut()
            .zip(acc.par_iter().zip(k4.par_iter()))
            .for_each(|(w, (s, k))| *w += (s + k) * (dt / 6.0));
        field.time = t0 + dt;
        let scale = field.max_abs();
        let asym = if scale > 0.0 { field.asymmetry() / scale } else { 0.0 };
        if asym > 1e-8 {
            return Err(Error::Consistency(format!(
                "conjugate symmetry violated by {asym:.3e} at t = {}",
                field.time
            )));
        }
        field.symmetrize();
        Ok(asym)
    }
}

/// Density slice with a fresh spline fit.
pub fn density_slice(field: &WignerField) -> Vec<Option<Complex64>> {
    let pf = BSplinePrefilter::new(field.eta_axis.len(), SPLINE_PAD);
    let rows = SplineRows::build(field, &pf, 0.0);
    let top = field.eta_axis.extent() * (1.0 + 1e-12);
    (0..field.n_k())
        .map(|kl| {
            let k = field.k_point(kl);
            let mut pos = [0.0; MAX_DIM];
            for a in 0..field.dim {
                let eta = k[a] * field.time;
                if eta.abs() > top {
                    return None;
                }
                pos[a] = eta / field.eta_axis.spacing + field.eta_axis.half as f64;
            }
            Some(eval_block(rows.row(kl), field.dim, rows.np, SPLINE_PAD, &pos))
        })
        .collect()
}

pub const DEFAULT_PAIR_TOLERANCE: f64 = 1e-8;

/// ∂_t Ŵ[P] for a one-off evaluation.
pub fn rhs(field: &WignerField, w: &InteractionKernel, g: &VelocityProfile) -> Result<Vec<Complex64>> {
    Dynamics::new(field, w, g, DEFAULT_PAIR_TOLERANCE)?.rhs(field)
}

pub fn step_rk4(field: &mut WignerField, w: &InteractionKernel, g: &VelocityProfile, dt: f64) -> Result<f64> {
    Dynamics::new(field, w, g, DEFAULT_PAIR_TOLERANCE)?.step_rk4(field, dt)
}

fn default_one() -> f64 {
    1.0
}

fn default_stride() -> usize {
    1
}

fn default_moments() -> usize {
    1
}

fn default_delta() -> f64 {
    0.1
}

fn default_transient() -> f64 {
    0.2
}

fn default_tolerance() -> f64 {
    DEFAULT_PAIR_TOLERANCE
}

/// Parameters of a nonlinear run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dim: usize,
    pub hbar: f64,
    pub epsilon: f64,
    pub profile: ProfileSpec,
    #[serde(default = "default_one")]
    pub profile_amplitude: f64,
    pub kernel: KernelSpec,
    #[serde(default = "default_one")]
    pub coupling: f64,
    pub k_max: f64,
    pub dk: f64,
    pub eta_max: f64,
    pub d_eta: f64,
    /// Time step; `None` selects the default rule.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_final: f64,
    /// Steps between recorded outputs.
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    /// σ₀ < σ₁ < σ₂ < σ₃ < σ₄.
    pub sigma: [f64; 5],
    pub n0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Number of η moments M in the weighted norms.
    #[serde(default = "default_moments")]
    pub moments: usize,
    /// Grid wavevectors whose density is recorded.
    #[serde(default)]
    pub traced_modes: Vec<Vec<f64>>,
    /// Reference constants K₁..K₅ for the 4Kᵢε² lines.
    #[serde(default)]
    pub thresholds: Option<[f64; 5]>,
    #[serde(default)]
    pub skip_penrose_check: bool,
    #[serde(default = "default_transient")]
    pub transient_fraction: f64,
    #[serde(default = "default_tolerance")]
    pub pair_tolerance: f64,
    /// Keep full-field snapshots for the scattering analysis.
    #[serde(default = "default_true")]
    pub keep_snapshots: bool,
    /// Evolve with the linear term only.
    #[serde(default)]
    pub linearized: bool,
}

fn default_true() -> bool {
    true
}

impl SimConfig {
    pub fn k_axis(&self) -> Result<Axis> {
        Axis::from_extent(self.k_max, self.dk)
    }

    pub fn eta_axis(&self) -> Result<Axis> {
        Axis::from_extent(self.eta_max, self.d_eta)
    }

    pub fn build_profile(&self) -> Result<VelocityProfile> {
        VelocityProfile::from_spec(self.dim, &self.profile, self.profile_amplitude)
    }

    pub fn build_kernel(&self) -> Result<InteractionKernel> {
        InteractionKernel::from_spec(self.dim, &self.kernel, self.coupling)
    }

    pub fn monitor_params(&self) -> MonitorParams {
        MonitorParams {
            sigma: self.sigma,
            moments: self.moments,
            delta: self.delta,
            hbar: self.hbar,
        }
    }

    /// Hard checks; returns advisory messages for the σ constraint set.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(1..=MAX_DIM).contains(&self.dim) {
            return Err(Error::Config(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(0.0..=1.0).contains(&self.hbar) {
            return Err(Error::Config(format!("hbar must lie in [0, 1], got {}", self.hbar)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be finite and nonnegative".into()));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config("t_final must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt <= self.t_final) {
                return Err(Error::Config(format!("dt = {dt} must lie in (0, t_final]")));
            }
        }
        if self.output_stride == 0 {
            return Err(Error::Config("output_stride must be at least 1".into()));
        }
        self.k_axis()?;
        let eta = self.eta_axis()?;
        if self.eta_max < self.k_max * self.t_final * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "eta_max = {} does not cover k_max * t_final = {}",
                self.eta_max,
                self.k_max * self.t_final
            )));
        }
        if self.moments > 4 {
            return Err(Error::Config("moments must be at most 4".into()));
        }
        if eta.len() < 2 * (self.moments + 2) + 1 {
            return Err(Error::Config("eta grid too small for the difference stencil".into()));
        }
        let s = self.sigma;
        if !(s.iter().all(|x| x.is_finite() && *x >= 0.0) && s.windows(2).all(|p| p[1] > p[0])) {
            return Err(Error::Config(
                "sigma must satisfy 0 <= s0 < s1 < s2 < s3 < s4".into(),
            ));
        }
        if !(self.transient_fraction >= 0.0 && self.transient_fraction < 1.0) {
            return Err(Error::Config("transient_fraction must lie in [0, 1)".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config("delta must lie in (0, 1/2)".into()));
        }
        let d = self.dim as f64;
        let mut notes = Vec::new();
        let checks = [
            (s[1] >= d + 8.0, format!("s1 >= d + 8 fails ({} < {})", s[1], d + 8.0)),
            (s[2] - s[1] > 1.5, "s2 - s1 > 3/2 fails".to_string()),
            (s[3] - s[2] > d / 2.0, "s3 - s2 > d/2 fails".to_string()),
            (s[4] - s[3] > (d + 1.0) / 2.0, "s4 - s3 > (d+1)/2 fails".to_string()),
            (s[4] < self.n0 - (d + 3.0) / 2.0, "s4 < N0 - (d+3)/2 fails".to_string()),
        ];
        for (ok, msg) in checks {
            if !ok {
                notes.push(format!("sigma constraint: {msg}"));
            }
        }
        Ok(notes)
    }
}

/// Limit profile and Cauchy residuals of the conjugated solution.
#[derive(Debug, Clone)]
pub struct ScatteringResult {
    pub q_inf: WignerField,
    pub times: Vec<f64>,
    pub cauchy_residuals: Vec<f64>,
    /// Exponent p of the scaling fit ‖P(s) - P(t)‖ ≈ t^{-p} ψ(s/t); `None` when it is undefined.
    pub rate_exponent: Option<f64>,
    /// Plain log-log slope of the residuals against the last snapshot (biased by the finite horizon).
    pub loglog_slope: Option<f64>,
    /// Residuals nonincreasing after the transient window.
    pub monotone: bool,
}

fn bracket_t(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// Residuals of earlier snapshots against the last one, in the σ₀ weighted norm.
pub fn scattering_profile(
    snapshots: &[WignerField],
    sigma0: f64,
    moments: usize,
    transient_fraction: f64,
) -> Result<ScatteringResult> {
    let last = snapshots
        .last()
        .ok_or_else(|| Error::InsufficientData("no snapshots".into()))?;
    let t_end = last.time;
    let start = transient_fraction * t_end;
    let late: Vec<&WignerField> = snapshots.iter().filter(|s| s.time >= start).collect();
    if late.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "{} snapshots past the transient window, need 6",
            late.len()
        )));
    }
    let params = NormParams {
        sigma: sigma0,
        moments,
        weight: WeightMode::Plain,
        delta: 0.0,
    };
    let mut times = Vec::new();
    let mut residuals = Vec::new();
    for s in snapshots.iter().take(snapshots.len() - 1) {
        times.push(s.time);
        residuals.push(weighted_norm_between(s, last, &params)?);
    }
    let tol = 1e-12 * residuals.iter().copied().fold(0.0, f64::max);
    let monotone = times
        .iter()
        .zip(residuals.windows(2))
        .filter(|(t, _)| **t >= start)
        .all(|(_, r)| r[1] <= r[0] + tol);
    let late_times: Vec<f64> = late.iter().map(|s| s.time).collect();
    let rate_exponent = scaling_rate(&late_times, |i, j| {
        if j + 1 == late.len() {
            // already computed against the last snapshot
            let offset = snapshots.len() - late.len();
            Ok(residuals[offset + i])
        } else {
            weighted_norm_between(late[i], late[j], &params)
        }
    })?;
    let fit_pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&residuals)
        .filter(|(t, r)| **t >= start && **r > 0.0)
        .map(|(t, r)| (*t, *r))
        .collect();
    let loglog_slope = if fit_pts.len() >= 3 {
        let xs: Vec<f64> = fit_pts.iter().map(|p| bracket_t(p.0).ln()).collect();
        let ys: Vec<f64> = fit_pts.iter().map(|p| p.1.ln()).collect();
        crate::diagnostics::least_squares(&xs, &ys).map(|f| -f.0).ok()
    } else {
        None
    };
    Ok(ScatteringResult {
        q_inf: last.clone(),
        times,
        cauchy_residuals: residuals,
        rate_exponent,
        loglog_slope,
        monotone,
    })
}

/// Decay exponent from pairwise distances d(i, j) between snapshots at `times`.
///
/// Self-similar mixing gives d(i, j) = t_i^{-p} ψ(t_j / t_i) with ψ unknown, so pairs sharing the
/// ratio t_j / t_i lie on one power law. p is the common slope of a regression with one intercept
/// per ratio class. Classes with fewer than two pairs carry no slope information and are skipped.
fn scaling_rate(times: &[f64], mut dist: impl FnMut(usize, usize) -> Result<f64>) -> Result<Option<f64>> {
    let mut classes: std::collections::BTreeMap<i64, Vec<(usize, usize)>> = Default::default();
    for (i, &ti) in times.iter().enumerate() {
        if ti <= 0.0 {
            continue;
        }
        for (j, &tj) in times.iter().enumerate().skip(i + 1) {
            let key = (tj / ti * 1e6).round() as i64;
            classes.entry(key).or_default().push((i, j));
        }
    }
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for pairs in classes.values().filter(|p| p.len() >= 2) {
        let mut pts = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            let d = dist(i, j)?;
            if d > 0.0 {
                pts.push((times[i].ln(), d.ln()));
            }
        }
        if pts.len() < 2 {
            continue;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        for (x, y) in pts {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
    }
    Ok((sxx > 0.0).then(|| -sxy / sxx))
}

/// Everything recorded by a run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub times: Vec<f64>,
    pub traces: Vec<DensityTrace>,
    pub monitors: MonitorSeries,
    pub snapshots: Vec<WignerField>,
    pub scattering: Option<ScatteringResult>,
    pub warnings: Vec<String>,
    /// Set when the run was aborted by norm growth.
    pub instability: Option<String>,
    pub dt: f64,
    /// Largest relative asymmetry seen before re-symmetrization.
    pub max_asymmetry: f64,
    /// max_t |Ŵ(t, 0, 0) - Ŵ(0, 0, 0)|.
    pub trace_drift: f64,
    /// Density slices over the whole k grid at each output time.
    pub density_history: Vec<Vec<Complex64>>,
    pub final_field: WignerField,
}

const GROWTH_LIMIT: f64 = 1e6;

fn initial_field(config: &SimConfig, init: &InitialWigner) -> Result<WignerField> {
    let data = init.scaled(config.epsilon);
    WignerField::from_fn(config.dim, config.k_axis()?, config.eta_axis()?, config.hbar, |k, e| {
        data.evaluate(k, e)
    })
}

fn default_dt(config: &SimConfig, w: &InteractionKernel, dynamics: &Dynamics, field: &WignerField) -> Result<f64> {
    let mut dt = 0.5 * config.d_eta / (config.k_max * (1.0 + w.l1_norm_bound() * config.epsilon));
    let horizon = config.t_final.min(1.0);
    let run = |dt: f64| -> Result<WignerField> {
        let mut f = field.clone();
        let n = (horizon / dt).ceil() as usize;
        let h = horizon / n as f64;
        for _ in 0..n {
            dynamics.step_rk4(&mut f, h)?;
        }
        Ok(f)
    };
    let mut coarse = run(dt)?;
    for _ in 0..12 {
        let fine = run(dt / 2.0)?;
        let scale = fine.max_abs();
        let diff = coarse
            .values
            .iter()
            .zip(&fine.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        dt /= 2.0;
        if scale == 0.0 || diff <= 1e-6 * scale {
            return Ok(dt);
        }
        coarse = fine;
    }
    Err(Error::Resolution("time step refinement did not settle".into()))
}

/// Integrate the conjugated evolution from ε·Ŵ[Q_in] to t_final.
pub fn simulate(config: &SimConfig, init: &InitialWigner) -> Result<SimOutput> {
    let mut warnings = config.validate()?;
    let g = config.build_profile()?;
    let w = config.build_kernel()?;
    let mut field = initial_field(config, init)?;
    let traced: Vec<usize> = config
        .traced_modes
        .iter()
        .map(|k| {
            field.k_index(k).ok_or_else(|| {
                Error::Config(format!("traced mode {k:?} is not a point of the k grid"))
            })
        })
        .collect::<Result<_>>()?;

    if !config.skip_penrose_check && !w.is_zero() {
        let k_reach = config.k_max * (config.dim as f64).sqrt();
        let report = quick_check(&w, &g, &[config.hbar], k_reach)?;
        if !(report.kappa > 0.0 && report.winding_numbers.iter().all(|s| s.winding == Some(0))) {
            return Err(Error::Instability(format!(
                "Penrose pre-check failed: kappa = {:.3e}",
                report.kappa
            )));
        }
    }

    let max0 = field.max_abs();
    let mut truncation_warned = false;
    if max0 > 0.0 && field.boundary_max() > 1e-6 * max0 {
        truncation_warned = true;
        warnings.push(format!(
            "truncation: boundary shell reaches {:.3e} of the maximum at t = 0",
            field.boundary_max() / max0
        ));
    }
    let mut dynamics = Dynamics::new(&field, &w, &g, config.pair_tolerance)?;
    if config.linearized {
        dynamics = dynamics.linearized();
    }
    let dt = match config.dt {
        Some(dt) => dt,
        None => default_dt(config, &w, &dynamics, &field)?,
    };
    let steps = (config.t_final / dt - 1e-9).ceil() as usize;
    let dt = config.t_final / steps as f64;

    let params = config.monitor_params();
    let mut monitors = MonitorSeries::new(
        config
            .thresholds
            .map(|k| k.map(|ki| 4.0 * ki * config.epsilon * config.epsilon)),
    );
    let mut times = Vec::new();
    let mut history: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut snapshots = Vec::new();
    let trace0 = field.values[field.center_k() * field.n_eta() + field.center_eta()];
    let mut trace_drift: f64 = 0.0;
    let mut max_asymmetry: f64 = 0.0;
    let mut instability = None;
    let monitor_scale = |row: &crate::diagnostics::MonitorRow| row.b5;
    let mut initial_monitor = None;

    let record = |field: &WignerField,
                      times: &mut Vec<f64>,
                      history: &mut Vec<(f64, Vec<Complex64>)>,
                      snapshots: &mut Vec<WignerField>,
                      monitors: &mut MonitorSeries,
                      warnings: &mut Vec<String>|
     -> Result<f64> {
        let slice = dynamics.density_slice(field)?;
        let dropped = slice.iter().filter(|v| v.is_none()).count();
        if dropped > 0 {
            warnings.push(format!(
                "t = {}: {dropped} modes outside the eta box omitted",
                field.time
            ));
        }
        history.push((field.time, slice.iter().map(|v| v.unwrap_or_else(zero)).collect()));
        let row = bootstrap_monitors(field, history, &params)?;
        let scale = monitor_scale(&row);
        monitors.push(row);
        times.push(field.time);
        if config.keep_snapshots {
            snapshots.push(field.clone());
        }
        Ok(scale)
    };

    let s0 = record(&field, &mut times, &mut history, &mut snapshots, &mut monitors, &mut warnings)?;
    initial_monitor.get_or_insert(s0);
    for step in 1..=steps {
        let asym = dynamics.step_rk4(&mut field, dt)?;
        field.time = step as f64 * dt;
        max_asymmetry = max_asymmetry.max(asym);
        let tr = field.values[field.center_k() * field.n_eta() + field.center_eta()];
        trace_drift = trace_drift.max((tr - trace0).norm());
        if step % config.output_stride == 0 || step == steps {
            let m = field.max_abs();
            if !truncation_warned && m > 0.0 && field.boundary_max() > 1e-6 * m {
                warnings.push(format!(
                    "truncation: boundary shell reaches {:.3e} of the maximum at t = {}",
                    field.boundary_max() / m,
                    field.time
                ));
                truncation_warned = true;
            }
            let s = record(&field, &mut times, &mut history, &mut snapshots, &mut monitors, &mut warnings)?;
            let base = initial_monitor.unwrap_or(0.0);
            if (base > 0.0 && s > GROWTH_LIMIT * base) || (max0 > 0.0 && m > GROWTH_LIMIT * max0) {
                instability = Some(format!("monitored norm grew by more than 1e6 at t = {}", field.time));
                break;
            }
        }
    }

    let out_dt = dt * config.output_stride as f64;
    let traces = traced
        .iter()
        .zip(&config.traced_modes)
        .map(|(&kl, k)| DensityTrace {
            k: k.clone(),
            dt: out_dt,
            values: history.iter().map(|(_, s)| s[kl]).collect(),
            hbar: config.hbar,
            provenance: Provenance::Nonlinear,
        })
        .collect();
    let scattering = if config.keep_snapshots && instability.is_none() {
        match scattering_profile(&snapshots, config.sigma[0], config.moments, config.transient_fraction) {
            Ok(s) => {
                if !s.monotone {
                    warnings.push("scattering residuals not monotone after the transient".into());
                }
                Some(s)
            }
            Err(Error::InsufficientData(msg)) => {
                warnings.push(format!("scattering analysis skipped: {msg}"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(SimOutput {
        times,
        traces,
        monitors,
        snapshots,
        scattering,
        warnings,
        instability,
        dt,
        max_asymmetry,
        trace_drift,
        density_history: history.into_iter().map(|(_, s)| s).collect(),
        final_field: field,
    })
}
