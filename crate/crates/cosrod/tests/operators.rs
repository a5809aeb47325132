//! Convergence of the spatial operators under grid refinement.

use cosrod::grid::{diff, integral_from_s, integrate, GridSpec};
use proptest::prelude::*;

fn f(s: f64) -> f64 {
    (3.0 * s).sin() + 0.5 * (1.7 * s).exp()
}

fn df(s: f64) -> f64 {
    3.0 * (3.0 * s).cos() + 0.85 * (1.7 * s).exp()
}

/// Antiderivative of f.
fn big_f(s: f64) -> f64 {
    -(3.0 * s).cos() / 3.0 + 0.5 / 1.7 * (1.7 * s).exp()
}

fn max_err(n: usize, op: impl Fn(&GridSpec, &[f64]) -> Vec<f64>, exact: impl Fn(&GridSpec, f64) -> f64) -> f64 {
    let g = GridSpec::new(0.5, n).unwrap();
    let vals: Vec<f64> = g.nodes().into_iter().map(f).collect();
    op(&g, &vals)
        .iter()
        .zip(g.nodes())
        .map(|(a, s)| (a - exact(&g, s)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn differentiation_is_second_order() {
    let errs: Vec<f64> = [11, 21, 41, 81].iter().map(|&n| max_err(n, diff, |_, s| df(s))).collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "ratios {errs:?}");
    }
}

#[test]
fn tail_quadrature_is_second_order() {
    let errs: Vec<f64> = [11, 21, 41, 81]
        .iter()
        .map(|&n| max_err(n, integral_from_s, |g, s| big_f(g.ell) - big_f(s)))
        .collect();
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "ratios {errs:?}");
    }
}

#[test]
fn full_quadrature_is_second_order() {
    let exact = big_f(0.5) - big_f(0.0);
    let err = |n: usize| {
        let g = GridSpec::new(0.5, n).unwrap();
        let v: Vec<f64> = g.nodes().into_iter().map(f).collect();
        (integrate(&g, &v) - exact).abs()
    };
    let r = err(11) / err(21);
    assert!((3.5..4.5).contains(&r), "ratio {r}");
}

proptest! {
    #[test]
    fn quadrature_exact_on_lines(n in 3usize..60, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let g = GridSpec::new(0.8, n).unwrap();
        let v: Vec<f64> = g.nodes().into_iter().map(|s| a * s + b).collect();
        let tail = integral_from_s(&g, &v);
        for (i, s) in g.nodes().into_iter().enumerate() {
            let exact = 0.5 * a * (0.64 - s * s) + b * (0.8 - s);
            prop_assert!((tail[i] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn diff_exact_on_quadratics(n in 3usize..60, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let g = GridSpec::new(1.1, n).unwrap();
        let v: Vec<f64> = g.nodes().into_iter().map(|s| a * s * s + b * s).collect();
        for (d, s) in diff(&g, &v).iter().zip(g.nodes()) {
            prop_assert!((d - (2.0 * a * s + b)).abs() < 1e-9);
        }
    }
}
