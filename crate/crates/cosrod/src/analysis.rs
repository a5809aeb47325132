//! Lyapunov monitors, stability-condition checks, error norms and decay fits.

use crate::dynamics::{RodParams, RodState};
use crate::error::{Error, Result};
use crate::grid::{diff, half_gradient, integrate, rotation_matrix, Field1, GridSpec, Mat2};
use crate::inner::{damping_constant_bound, rotation_error, InnerGains};
use crate::outer::{OuterGains, OuterSolution};
use crate::trajectory::DesiredTrajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub c_used: f64,
    pub c_max: f64,
    pub c1: f64,
    pub v1: f64,
    pub v2: f64,
    /// Smallest eigenvalue of K_q + Phi over the nodes at t = 0.
    pub kq_min_eig: f64,
    pub kq_condition_ok: bool,
    pub c_matrix: Mat2,
    pub phi_sup_norm: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorNorms {
    pub t: f64,
    pub p_err_l2: f64,
    pub p_err_t_l2: f64,
    pub p_err_s_l2: f64,
    pub theta_err_linf: f64,
    pub theta_err_t_linf: f64,
    pub theta_err_s_l2: f64,
}

/// V1 = 1/2 int k_u e_s^2 + e_t^2 + 2 c e e_t + k_theta e^2.
///
/// The e_s term is summed on the midpoints where the inner loop's stiffness
/// operator lives; the rest uses the trapezoid rule on the nodes. With that
/// split V1 is the energy of the discrete error dynamics.
pub fn lyapunov_inner(
    grid: &GridSpec,
    state: &RodState,
    theta_star: &[f64],
    theta_star_t: &[f64],
    gains: &InnerGains,
    c: f64,
) -> Result<f64> {
    let bound = damping_constant_bound(gains);
    if !(c > 0.0 && c < bound) {
        return Err(Error::Invalid(format!("c = {c} outside (0, {bound})")));
    }
    let (e, et) = rotation_error(state, theta_star, theta_star_t);
    let es = half_gradient(grid, &e);
    let stiff: f64 = es
        .iter()
        .enumerate()
        .map(|(h, g)| 0.5 * (gains.k_u[h] + gains.k_u[h + 1]) * g * g)
        .sum::<f64>()
        * grid.ds;
    let rest: Field1 =
        (0..grid.n).map(|i| et[i] * et[i] + 2.0 * c * e[i] * et[i] + gains.k_theta[i] * e[i] * e[i]).collect();
    Ok(0.5 * (stiff + integrate(grid, &rest)))
}

/// Phi = R K3 R^T - R* K3 R*^T at every node.
pub fn phi_field(theta: &[f64], theta_star: &[f64], k3: &Mat2) -> Vec<Mat2> {
    theta
        .iter()
        .zip(theta_star)
        .map(|(&a, &b)| {
            let (r, rs) = (rotation_matrix(a), rotation_matrix(b));
            r * k3 * r.transpose() - rs * k3 * rs.transpose()
        })
        .collect()
}

fn spectral_norm_sym(m: &Mat2) -> f64 {
    m.symmetric_eigenvalues().abs().max()
}

fn min_eig(m: &Mat2) -> f64 {
    m.symmetric_eigenvalues().min()
}

/// V2 = 1/2 int pe_s^T (K_q + Phi) pe_s + |pe_t|^2 + 2 c1 pe . pe_t + pe^T K_p pe,
/// with pe = p - p*. Returns (V2, sup |Phi|).
pub fn lyapunov_outer(
    grid: &GridSpec,
    state: &RodState,
    traj: &DesiredTrajectory,
    theta_star: &[f64],
    gains: &OuterGains,
    c1: f64,
    k3: &Mat2,
) -> Result<(f64, f64)> {
    let c_lim = min_eig(&gains.k_p).sqrt();
    if !(c1 > 0.0 && c1 < c_lim) {
        return Err(Error::Invalid(format!("c1 = {c1} outside (0, {c_lim})")));
    }
    let n = grid.n;
    let pe: Vec<_> = (0..n).map(|i| state.p[i] - traj.p_star[i]).collect();
    let pet: Vec<_> = (0..n).map(|i| state.v[i] - traj.p_star_t[i]).collect();
    let pes = diff(grid, &pe);
    let phi = phi_field(&state.theta, theta_star, k3);
    let dens: Field1 = (0..n)
        .map(|i| {
            (pes[i].transpose() * (gains.k_q + phi[i]) * pes[i])[0]
                + pet[i].norm_squared()
                + 2.0 * c1 * pe[i].dot(&pet[i])
                + (pe[i].transpose() * gains.k_p * pe[i])[0]
        })
        .collect();
    let sup = phi.iter().map(spectral_norm_sym).fold(0.0, f64::max);
    Ok((0.5 * integrate(grid, &dens), sup))
}

/// True when c1 K_q + c1 Phi - Phi_t / 2 is positive definite at every node.
pub fn outer_decay_condition(c1: f64, k_q: &Mat2, phi: &[Mat2], phi_t: &[Mat2]) -> bool {
    phi.iter().zip(phi_t).all(|(p, pt)| min_eig(&((k_q + p) * c1 - pt * 0.5)) > 0.0)
}

/// L2 norm of Psi = (Phi p*_s)_s + (R* - R)_s K3 q_bar, a diagnostic of how
/// far the inner loop is from realizing theta*.
pub fn psi_norm(
    grid: &GridSpec,
    state: &RodState,
    traj: &DesiredTrajectory,
    theta_star: &[f64],
    params: &RodParams,
) -> f64 {
    let n = grid.n;
    let phi = phi_field(&state.theta, theta_star, &params.k3);
    let ps = diff(grid, &traj.p_star);
    let flux: Vec<_> = (0..n).map(|i| phi[i] * ps[i]).collect();
    let dflux = diff(grid, &flux);
    let gap: Vec<_> =
        (0..n).map(|i| (rotation_matrix(theta_star[i]) - rotation_matrix(state.theta[i])) * params.k3 * params.q_bar).collect();
    let dgap = diff(grid, &gap);
    let sq: Field1 = (0..n).map(|i| (dflux[i] + dgap[i]).norm_squared()).collect();
    integrate(grid, &sq).sqrt()
}

/// Largest c1 in (0, sqrt(min eig K_p)) with K_v - c1 I - c1 K_v K_p^-1 K_v / 4
/// positive definite at every node, found by bisection. Diagonal K_v.
pub fn max_c1(gains: &OuterGains, outer: &OuterSolution) -> f64 {
    let kp_inv = gains.k_p.try_inverse().unwrap_or_else(Mat2::zeros);
    let ok = |c: f64| {
        outer.kv1.iter().zip(&outer.kv2).all(|(&a, &b)| {
            let kv = Mat2::new(a, 0.0, 0.0, b);
            let m = kv - Mat2::identity() * c - kv * kp_inv * kv * (c / 4.0);
            min_eig(&(0.5 * (m + m.transpose()))) > 0.0
        })
    };
    let mut hi = min_eig(&gains.k_p).sqrt();
    let mut lo = 0.0;
    if ok(hi) {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[allow(clippy::too_many_arguments)]
pub fn check_stability_conditions(
    grid: &GridSpec,
    state0: &RodState,
    traj0: &DesiredTrajectory,
    outer0: &OuterSolution,
    outer_gains: &OuterGains,
    inner_gains: &InnerGains,
    params: &RodParams,
) -> StabilityReport {
    let mut notes = Vec::new();
    let c_max = damping_constant_bound(inner_gains);
    let c_used = 0.5 * c_max;
    let phi = phi_field(&state0.theta, &outer0.theta_star, &params.k3);
    let kq_min_eig = phi.iter().map(|p| min_eig(&(outer_gains.k_q + p))).fold(f64::INFINITY, f64::min);
    let kq_condition_ok = kq_min_eig > 0.0;
    if !kq_condition_ok {
        notes.push(format!("K_q + Phi not positive definite at t=0 (min eigenvalue {kq_min_eig:.3e})"));
    }
    let c1_max = max_c1(outer_gains, outer0);
    let c1 = 0.5 * c1_max;
    if c1 <= 1e-9 {
        notes.push(format!("damping gains admit only c1 = {c1:.3e}"));
    }
    let zero_t = vec![0.0; grid.n];
    let v1 = lyapunov_inner(grid, state0, &outer0.theta_star, &zero_t, inner_gains, c_used).unwrap_or(f64::NAN);
    let (v2, phi_sup_norm) = if c1 > 0.0 {
        lyapunov_outer(grid, state0, traj0, &outer0.theta_star, outer_gains, c1, &params.k3)
            .unwrap_or((f64::NAN, f64::NAN))
    } else {
        (f64::NAN, phi.iter().map(spectral_norm_sym).fold(0.0, f64::max))
    };
    for n in &notes {
        tracing::info!("{n}");
    }
    StabilityReport {
        c_used,
        c_max,
        c1,
        v1,
        v2,
        kq_min_eig,
        kq_condition_ok,
        c_matrix: Mat2::identity() * c1,
        phi_sup_norm,
        notes,
    }
}

pub fn error_norms(
    grid: &GridSpec,
    state: &RodState,
    traj: &DesiredTrajectory,
    theta_star: &[f64],
    theta_star_t: &[f64],
) -> ErrorNorms {
    let n = grid.n;
    let pe: Vec<_> = (0..n).map(|i| state.p[i] - traj.p_star[i]).collect();
    let pet: Vec<_> = (0..n).map(|i| state.v[i] - traj.p_star_t[i]).collect();
    let pes = diff(grid, &pe);
    let (e, et) = rotation_error(state, theta_star, theta_star_t);
    let es = diff(grid, &e);
    let l2 = |sq: Field1| integrate(grid, &sq).sqrt();
    let linf = |f: &Field1| f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    ErrorNorms {
        t: state.t,
        p_err_l2: l2(pe.iter().map(|v| v.norm_squared()).collect()),
        p_err_t_l2: l2(pet.iter().map(|v| v.norm_squared()).collect()),
        p_err_s_l2: l2(pes.iter().map(|v| v.norm_squared()).collect()),
        theta_err_linf: linf(&e),
        theta_err_t_linf: linf(&et),
        theta_err_s_l2: l2(es.iter().map(|v| v * v).collect()),
    }
}

/// Least-squares line through (t, ln value). Samples at or below 1e-14 are
/// dropped. Returns (slope, r^2).
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = series.iter().filter(|(_, v)| *v > 1e-14).map(|&(t, v)| (t, v.ln())).collect();
    if pts.len() < 10 {
        return Err(Error::Invalid(format!("need at least 10 positive samples, got {}", pts.len())));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::Invalid("all samples share one time".into()));
    }
    let rate = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Ok((rate, r2))
}
