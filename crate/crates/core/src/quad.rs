//! Gauss–Legendre rules and composite integration.

use std::ops::{Add, Mul};
use std::sync::OnceLock;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights on [-1, 1], by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate over [a, b] with a single panel.
    pub fn panel<T, F>(&self, a: f64, b: f64, mut f: F) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
        F: FnMut(f64) -> T,
    {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc: Option<T> = None;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x) * (w * half);
            acc = Some(match acc {
                Some(s) => s + v,
                None => v,
            });
        }
        acc.expect("empty rule")
    }

    /// Composite rule with `panels` equal panels on [a, b].
    pub fn composite<T, F>(&self, a: f64, b: f64, panels: usize, mut f: F) -> T
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
        F: FnMut(f64) -> T,
    {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut total = self.panel(a, a + h, &mut f);
        for i in 1..panels {
            let lo = a + h * i as f64;
            total = total + self.panel(lo, lo + h, &mut f);
        }
        total
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

macro_rules! cached_rule {
    ($name:ident, $n:expr) => {
        pub fn $name() -> &'static GaussLegendre {
            static RULE: OnceLock<GaussLegendre> = OnceLock::new();
            RULE.get_or_init(|| GaussLegendre::new($n))
        }
    };
}

cached_rule!(gl10, 10);
cached_rule!(gl20, 20);
cached_rule!(gl32, 32);

/// Integral of a smooth function over [a, b] with `panels` 20-point panels.
pub fn integrate(a: f64, b: f64, panels: usize, f: impl FnMut(f64) -> f64) -> f64 {
    gl20().composite(a, b, panels, f)
}

pub fn integrate_complex(
    a: f64,
    b: f64,
    panels: usize,
    f: impl FnMut(f64) -> Complex64,
) -> Complex64 {
    gl20().composite(a, b, panels, f)
}
