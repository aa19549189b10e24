use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qmix::diagnostics::least_squares;
use qmix::interp::bspline_weights;
use qmix::linear::{free_density, volterra_kernel, InitialWigner};
use qmix::penrose::winding_number;
use qmix::{InteractionKernel, VelocityProfile};

fn circle(center: Complex64, radius: f64, n: usize, turns: i64) -> Vec<Complex64> {
    (0..n)
        .map(|j| center + Complex64::from_polar(radius, 2.0 * PI * turns as f64 * j as f64 / n as f64))
        .collect()
}

proptest! {
    #[test]
    fn bspline_weights_reproduce_linears(f in 0.0f64..1.0) {
        let w = bspline_weights(f);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let centroid: f64 = w.iter().zip([-1.0, 0.0, 1.0, 2.0]).map(|(a, b)| a * b).sum();
        prop_assert!((centroid - f).abs() < 1e-14);
    }

    #[test]
    fn winding_counts_turns(cx in -0.5f64..0.5, cy in -0.5f64..0.5, turns in -3i64..=3, far in 2.0f64..5.0) {
        prop_assume!(turns != 0);
        let curve = circle(Complex64::new(cx, cy), 1.0, 400 * turns.unsigned_abs() as usize, turns);
        prop_assert_eq!(winding_number(&curve, Complex64::new(0.0, 0.0)).unwrap(), turns);
        prop_assert_eq!(winding_number(&curve, Complex64::new(far, 0.0)).unwrap(), 0);
    }

    #[test]
    fn line_fit_is_exact_on_lines(slope in -5.0f64..5.0, icpt in -5.0f64..5.0, n in 2usize..40) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
        let (s, c, r) = least_squares(&xs, &ys).unwrap();
        prop_assert!((s - slope).abs() < 1e-10 && (c - icpt).abs() < 1e-10 && r < 1e-10);
    }

    #[test]
    fn free_density_is_linear_in_data(a in -3.0f64..3.0, k in -2.0f64..2.0, t in 0.0f64..20.0) {
        let init = InitialWigner::gaussian(1.0, 0.7, 1.3);
        let lhs = free_density(&init.scaled(a), &[k], t);
        let rhs = free_density(&init, &[k], t) * a;
        prop_assert!((lhs - rhs).norm() <= 1e-15 * (1.0 + rhs.norm()));
    }

    #[test]
    fn volterra_kernel_is_linear_in_coupling(c in -4.0f64..4.0, k in 0.05f64..3.0, t in 0.0f64..10.0, hbar in 0.0f64..1.0) {
        let g = VelocityProfile::gaussian(1, 1.0, 1.0).unwrap();
        let w = InteractionKernel::gaussian(1, 1.0).unwrap();
        let base = volterra_kernel(&w, &g, hbar, t, &[k]).unwrap();
        let scaled = volterra_kernel(&w.scaled(c).unwrap(), &g, hbar, t, &[k]).unwrap();
        prop_assert!((scaled - c * base).abs() <= 1e-13 * (1.0 + base.abs()));
        let zero = InteractionKernel::zero(1).unwrap();
        prop_assert_eq!(volterra_kernel(&zero, &g, hbar, t, &[k]).unwrap(), 0.0);
    }
}
