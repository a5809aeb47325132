//! Inner loop: the distributed moment that turns the rotational error into a
//! damped wave,
//!
//! ```text
//! e_tt = (k_u e_s)_s - k_w e_t - k_theta e,    e = theta - theta*
//! ```
//!
//! `m_c_s` is assembled from the same discrete operators the dynamics uses,
//! so the cancellation holds to rounding rather than to truncation error.

use crate::dynamics::{check_len, coupling, second_derivative, ControlSignal, RodParams, RodState};
use crate::error::{Error, Result};
use crate::grid::{diff, divergence, half_average, half_gradient, integral_from_s, wrap_angle, Field1, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct InnerGains {
    pub k_u: Field1,
    pub k_w: Field1,
    pub k_theta: Field1,
}

impl InnerGains {
    pub fn uniform(n: usize, k_u: f64, k_w: f64, k_theta: f64) -> Self {
        Self { k_u: vec![k_u; n], k_w: vec![k_w; n], k_theta: vec![k_theta; n] }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        for f in [&self.k_u, &self.k_w, &self.k_theta] {
            check_len(grid, f.len())?;
            if f.iter().any(|&k| !(k.is_finite() && k > 0.0)) {
                return Err(Error::Invalid("inner gains must be strictly positive".into()));
            }
        }
        Ok(())
    }
}

/// Rotational tracking error and its rate, nearest branch.
pub fn rotation_error(state: &RodState, theta_star: &[f64], theta_star_t: &[f64]) -> (Field1, Field1) {
    let e = state.theta.iter().zip(theta_star).map(|(&a, &b)| wrap_angle(a - b)).collect();
    let et = state.w.iter().zip(theta_star_t).map(|(&a, &b)| a - b).collect();
    (e, et)
}

/// Discrete (k_u e_s)_s with zero slope at the tip.
pub fn error_stiffness_term(grid: &GridSpec, k_u: &[f64], e: &[f64]) -> Field1 {
    let ku = half_average(k_u);
    let flux: Field1 = half_gradient(grid, e).iter().zip(&ku).map(|(g, k)| g * k).collect();
    divergence(grid, &flux, 0.0, 0.0)
}

pub fn compute_mc(
    grid: &GridSpec,
    state: &RodState,
    theta_star: &[f64],
    theta_star_t: &[f64],
    theta_star_tt: &[f64],
    gains: &InnerGains,
    params: &RodParams,
) -> Result<ControlSignal> {
    for len in [theta_star.len(), theta_star_t.len(), theta_star_tt.len(), state.theta.len()] {
        check_len(grid, len)?;
    }
    gains.validate(grid)?;
    let n = grid.n;
    let rho_j = params.rho_j;
    let (e, et) = rotation_error(state, theta_star, theta_star_t);
    let cpl = coupling(grid, &state.p, &state.theta, params);
    let integrand: Field1 = (0..n)
        .map(|i| -gains.k_w[i] * et[i] - gains.k_theta[i] * e[i] - cpl[i] + theta_star_tt[i])
        .collect();
    let tail = integral_from_s(grid, &integrand);

    let theta_s = diff(grid, &state.theta);
    let mut e_s = diff(grid, &e);
    // Trackability: the error slope vanishes at the tip.
    e_s[n - 1] = 0.0;
    let m_c: Field1 = (0..n)
        .map(|i| rho_j * (params.k4 * theta_s[i] - gains.k_u[i] * e_s[i]) + rho_j * tail[i])
        .collect();

    let tip_slope = m_c[n - 1] / (rho_j * params.k4);
    let theta_ss = second_derivative(grid, &state.theta, tip_slope);
    let stiff = error_stiffness_term(grid, &gains.k_u, &e);
    let m_c_s = (0..n)
        .map(|i| rho_j * (params.k4 * theta_ss[i] - stiff[i]) - rho_j * integrand[i])
        .collect();
    Ok(ControlSignal { m_c, m_c_s })
}

/// Largest admissible cross-term weight c in V1:
/// inf over s of min(sqrt(k_theta), k_theta k_w / (k_theta + k_w^2 / 4)).
pub fn damping_constant_bound(gains: &InnerGains) -> f64 {
    gains
        .k_theta
        .iter()
        .zip(&gains.k_w)
        .map(|(&kt, &kw)| kt.sqrt().min(kt * kw / (kt + kw * kw / 4.0)))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{initial_state, rotational_rhs};
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec::new(0.5, 11).unwrap()
    }

    fn reference_gains() -> InnerGains {
        InnerGains::uniform(11, 0.5, 2.0, 4.0)
    }

    #[test]
    fn rest_needs_no_input() {
        let g = grid();
        let z = vec![0.0; 11];
        let c = compute_mc(&g, &initial_state(&g), &z, &z, &z, &reference_gains(), &RodParams::default()).unwrap();
        assert!(c.m_c.iter().chain(&c.m_c_s).all(|&v| v == 0.0));
    }

    #[test]
    fn sine_error_base_moment() {
        let g = grid();
        let mut s = initial_state(&g);
        let alpha = 0.1;
        for i in 0..11 {
            s.theta[i] = alpha * (PI * g.s(i) / 1.0).sin();
        }
        let z = vec![0.0; 11];
        let p = RodParams::default();
        let c = compute_mc(&g, &s, &z, &z, &z, &reference_gains(), &p).unwrap();
        // Straight centerline: the coupling is -K5 sin(theta) on midpoints,
        // so the integrand is -4 theta + K5 sin(theta_mid) averaged.
        // Continuum: m_c(0) = (K4 - k_u) theta_s(0) + int_0^l (-k_theta theta + K5 sin theta) ds.
        let n = 4000;
        let h = 0.5 / n as f64;
        let mut quad = 0.0;
        for k in 0..=n {
            let x = k as f64 * h;
            let th = alpha * (PI * x).sin();
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            quad += w * h * (-4.0 * th + 1.5 * th.sin());
        }
        let expect = 0.5 * alpha * PI + quad;
        assert!((c.m_c[0] - expect).abs() < 2e-3, "{} vs {}", c.m_c[0], expect);
    }

    #[test]
    fn tip_moment_matches_bending() {
        let g = grid();
        let mut s = initial_state(&g);
        for i in 0..11 {
            s.theta[i] = 0.3 * g.s(i) * g.s(i);
        }
        let th: Field1 = (0..11).map(|i| 0.2 * g.s(i)).collect();
        let z = vec![0.0; 11];
        let p = RodParams { rho_j: 2.5, ..Default::default() };
        let c = compute_mc(&g, &s, &th, &z, &z, &reference_gains(), &p).unwrap();
        let slope = (1.5 * s.theta[10] - 2.0 * s.theta[9] + 0.5 * s.theta[8]) / 0.05;
        assert!((c.m_c[10] - 2.5 * slope).abs() < 1e-12);
    }

    #[test]
    fn identity_on_rest_translation() {
        let g = grid();
        let mut s = initial_state(&g);
        for i in 0..11 {
            let x = g.s(i);
            s.theta[i] = 0.4 * x - 0.7 * x * x;
            s.w[i] = 0.1 * x;
        }
        let ts: Field1 = (0..11).map(|i| -0.3 * g.s(i)).collect();
        let tst: Field1 = (0..11).map(|i| 0.2 * g.s(i)).collect();
        let tstt: Field1 = (0..11).map(|i| (3.0 * g.s(i)).sin()).collect();
        let gains = reference_gains();
        let p = RodParams::default();
        let c = compute_mc(&g, &s, &ts, &tst, &tstt, &gains, &p).unwrap();
        let alpha = rotational_rhs(&g, &s, &p, &c).unwrap();
        let (e, et) = rotation_error(&s, &ts, &tst);
        let stiff = error_stiffness_term(&g, &gains.k_u, &e);
        for i in 1..11 {
            let want = stiff[i] - 2.0 * et[i] - 4.0 * e[i];
            assert!((alpha[i] - tstt[i] - want).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn scales_with_rho_j() {
        let g = grid();
        let mut s = initial_state(&g);
        for i in 0..11 {
            s.theta[i] = 0.5 * g.s(i);
        }
        let z = vec![0.0; 11];
        let c1 = compute_mc(&g, &s, &z, &z, &z, &reference_gains(), &RodParams::default()).unwrap();
        let p3 = RodParams { rho_j: 3.0, ..Default::default() };
        let c3 = compute_mc(&g, &s, &z, &z, &z, &reference_gains(), &p3).unwrap();
        for i in 0..11 {
            assert!((c3.m_c[i] - 3.0 * c1.m_c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_values() {
        assert_eq!(damping_constant_bound(&InnerGains::uniform(5, 0.5, 2.0, 4.0)), 1.6);
        let mut g = InnerGains::uniform(4, 0.5, 2.0, 4.0);
        g.k_theta[2] = 1.0;
        // k_theta = 1: min(1, 2 / 2) = 1.
        assert_eq!(damping_constant_bound(&g), 1.0);
        let mut prev = f64::INFINITY;
        for kw in [1.0, 10.0, 100.0, 1e4] {
            let b = damping_constant_bound(&InnerGains::uniform(3, 1.0, kw, 1.0));
            assert!(b <= prev);
            prev = b;
        }
        assert!((prev - 4.0 / 1e4).abs() < 1e-7);
    }

    #[test]
    fn rejects_nonpositive_gains() {
        let g = grid();
        let z = vec![0.0; 11];
        let bad = InnerGains::uniform(11, 0.5, 0.0, 4.0);
        assert!(compute_mc(&g, &initial_state(&g), &z, &z, &z, &bad, &RodParams::default()).is_err());
    }
}
