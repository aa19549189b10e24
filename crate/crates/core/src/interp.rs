//! Cubic splines: radial tables and interpolating B-spline coefficients on uniform grids.

use crate::error::{Error, Result};

/// Cubic spline through uniformly spaced samples on [0, (n-1)h].
/// The slope at 0 is clamped to zero (even extension); the far end is natural.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpline {
    spacing: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl RadialSpline {
    pub fn new(spacing: f64, values: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Domain(format!("table spacing must be positive, got {spacing}")));
        }
        if values.len() < 4 {
            return Err(Error::Domain("radial table needs at least 4 samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("radial table contains non-finite samples".into()));
        }
        let n = values.len();
        let h = spacing;
        // tridiagonal system for second derivatives
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = h / 3.0;
        sup[0] = h / 6.0;
        rhs[0] = (values[1] - values[0]) / h;
        for i in 1..n - 1 {
            sub[i] = h / 6.0;
            diag[i] = 2.0 * h / 3.0;
            sup[i] = h / 6.0;
            rhs[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h;
        }
        diag[n - 1] = 1.0;
        let second = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        Ok(RadialSpline {
            spacing,
            values,
            second,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    pub fn extent(&self) -> f64 {
        self.spacing * (self.values.len() - 1) as f64
    }

    fn locate(&self, r: f64) -> (usize, f64) {
        let x = r / self.spacing;
        let i = (x.floor() as usize).min(self.values.len() - 2);
        (i, x - i as f64)
    }

    /// Value at r ≥ 0; `None` beyond the table.
    pub fn eval(&self, r: f64) -> Option<f64> {
        if !(0.0..=self.extent()).contains(&r) {
            return None;
        }
        let (i, t) = self.locate(r);
        let h2 = self.spacing * self.spacing;
        let a = 1.0 - t;
        let v = a * self.values[i]
            + t * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (t * t * t - t) * self.second[i + 1]) * h2 / 6.0;
        Some(v)
    }

    pub fn derivative(&self, r: f64) -> Option<f64> {
        if !(0.0..=self.extent()).contains(&r) {
            return None;
        }
        let (i, t) = self.locate(r);
        let h = self.spacing;
        let a = 1.0 - t;
        let v = (self.values[i + 1] - self.values[i]) / h
            + h / 6.0
                * (-(3.0 * a * a - 1.0) * self.second[i] + (3.0 * t * t - 1.0) * self.second[i + 1]);
        Some(v)
    }
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cubic B-spline weights for taps at offsets -1, 0, 1, 2 from the cell start, fraction `f` in [0,1).
#[inline]
pub fn bspline_weights(f: f64) -> [f64; 4] {
    let f2 = f * f;
    let f3 = f2 * f;
    let a = 1.0 - f;
    [
        a * a * a / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ]
}

/// Prefilter turning samples into interpolating cubic B-spline coefficients.
///
/// Data are extended by zeros for `pad` points on each side; the coefficient line has
/// length `n + 2 * pad`. Factorization of the constant [1 4 1]/6 system is cached.
#[derive(Debug, Clone)]
pub struct BSplinePrefilter {
    n: usize,
    pad: usize,
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl BSplinePrefilter {
    pub fn new(n: usize, pad: usize) -> Self {
        let m = n + 2 * pad;
        let mut inv_pivot = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let off = 1.0 / 6.0;
        let mut prev_upper = 0.0;
        for i in 0..m {
            let piv = 4.0 / 6.0 - off * prev_upper;
            inv_pivot[i] = 1.0 / piv;
            upper[i] = off / piv;
            prev_upper = upper[i];
        }
        BSplinePrefilter {
            n,
            pad,
            inv_pivot,
            upper,
        }
    }

    pub fn data_len(&self) -> usize {
        self.n
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn coeff_len(&self) -> usize {
        self.n + 2 * self.pad
    }

    /// In-place solve on a padded line of length `coeff_len`, reading with `stride`.
    pub fn solve_strided<T>(&self, line: &mut [T], offset: usize, stride: usize)
    where
        T: Copy
            + std::ops::Sub<Output = T>
            + std::ops::Mul<f64, Output = T>,
    {
        let m = self.coeff_len();
        let off = 1.0 / 6.0;
        let mut prev = line[offset];
        prev = prev * self.inv_pivot[0];
        line[offset] = prev;
        for i in 1..m {
            let idx = offset + i * stride;
            let v = (line[idx] - prev * off) * self.inv_pivot[i];
            line[idx] = v;
            prev = v;
        }
        for i in (0..m - 1).rev() {
            let idx = offset + i * stride;
            let next = line[idx + stride];
            line[idx] = line[idx] - next * self.upper[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_spline_reproduces_smooth_even_function() {
        let h = 0.02;
        let vals: Vec<f64> = (0..600).map(|i| (-(i as f64 * h).powi(2) / 2.0).exp()).collect();
        let s = RadialSpline::new(h, vals).unwrap();
        for &r in &[0.0, 0.013, 0.5, 1.234, 3.0] {
            let exact = (-r * r / 2.0f64).exp();
            assert!((s.eval(r).unwrap() - exact).abs() < 1e-7, "r={r}");
            assert!((s.derivative(r).unwrap() + r * exact).abs() < 1e-5);
        }
        assert!(s.eval(100.0).is_none());
    }

    #[test]
    fn bspline_weights_partition_unity() {
        for f in [0.0, 0.25, 0.7, 0.999] {
            let w = bspline_weights(f);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn prefilter_interpolates_samples() {
        let n = 21;
        let pad = 10;
        let pf = BSplinePrefilter::new(n, pad);
        let data: Vec<f64> = (0..n).map(|i| (-(((i as f64) - 10.0) * 0.3).powi(2)).exp()).collect();
        let mut line = vec![0.0; pf.coeff_len()];
        line[pad..pad + n].copy_from_slice(&data);
        pf.solve_strided(&mut line, 0, 1);
        for (i, &d) in data.iter().enumerate() {
            let j = i + pad;
            let v = (line[j - 1] + 4.0 * line[j] + line[j + 1]) / 6.0;
            assert!((v - d).abs() < 1e-12);
        }
    }
}
