//! Planar Cosserat rod: right-hand sides and the time stepper.
//!
//! Positions and angles live on the nodes; strains, stresses and the
//! shear/rotation coupling live on the midpoints between nodes. The tip
//! closes with the natural conditions as prescribed fluxes: zero internal
//! force, and bending moment equal to the applied `m_c(l)`.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::grid::{
    divergence, half_average, half_gradient, hat2, rotation_matrix, Field1, Field2, GridSpec, Mat2, Vec2,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RodParams {
    /// Linear stiffness over rho*sigma; must be diagonal.
    pub k3: Mat2,
    /// Angular stiffness over rho*J.
    pub k4: f64,
    /// Linear stiffness over rho*J.
    pub k5: f64,
    pub rho_j: f64,
    /// Gravity along +z of the plane.
    pub g: f64,
    pub q_bar: Vec2,
    /// Rest angular strain. A constant offset drops out of every planar
    /// term, so it is validated but otherwise unused.
    pub u_bar: f64,
}

impl Default for RodParams {
    fn default() -> Self {
        Self {
            k3: Mat2::new(1.0, 0.0, 0.0, 1.5),
            k4: 1.0,
            k5: 1.5,
            rho_j: 1.0,
            g: 0.0,
            q_bar: Vector2::new(0.0, 1.0),
            u_bar: 0.0,
        }
    }
}

impl RodParams {
    pub fn validate(&self) -> Result<()> {
        let k = &self.k3;
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 {
            return Err(Error::Config("K3 must be diagonal".into()));
        }
        let positive = [k[(0, 0)], k[(1, 1)], self.k4, self.k5, self.rho_j];
        if positive.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::Config("K3, K4, K5 and rho_J must be strictly positive".into()));
        }
        if !self.g.is_finite() || !self.u_bar.is_finite() || !self.q_bar.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("g, q_bar and u_bar must be finite".into()));
        }
        Ok(())
    }

    /// Time step limit ds / sqrt(largest squared wave speed).
    pub fn cfl_limit(&self, grid: &GridSpec) -> f64 {
        let c2 = self.k3[(0, 0)].max(self.k3[(1, 1)]).max(self.k4);
        grid.ds / c2.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodState {
    pub p: Field2,
    pub v: Field2,
    pub theta: Field1,
    pub w: Field1,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub m_c: Field1,
    /// Analytic spatial derivative of `m_c`, supplied by the controller.
    pub m_c_s: Field1,
}

impl ControlSignal {
    pub fn zero(n: usize) -> Self {
        Self { m_c: vec![0.0; n], m_c_s: vec![0.0; n] }
    }
}

/// Straight, undeformed rod along the z axis, at rest.
pub fn initial_state(grid: &GridSpec) -> RodState {
    RodState {
        p: grid.nodes().into_iter().map(|s| Vector2::new(0.0, s)).collect(),
        v: vec![Vector2::zeros(); grid.n],
        theta: vec![0.0; grid.n],
        w: vec![0.0; grid.n],
        t: 0.0,
    }
}

pub(crate) fn check_len(grid: &GridSpec, got: usize) -> Result<()> {
    if got != grid.n {
        return Err(Error::GridMismatch { expected: grid.n, got });
    }
    Ok(())
}

fn check_finite(state: &RodState) -> Result<()> {
    for i in 0..state.p.len() {
        let ok = state.p[i].iter().chain(state.v[i].iter()).all(|x| x.is_finite())
            && state.theta[i].is_finite()
            && state.w[i].is_finite();
        if !ok {
            return Err(Error::NonFinite { node: i, t: state.t });
        }
    }
    Ok(())
}

/// Midpoint strain vectors p_s and rotation angles.
fn midpoint_frames(grid: &GridSpec, p: &[Vec2], theta: &[f64]) -> (Field2, Field1) {
    (half_gradient(grid, p), half_average(theta))
}

/// Internal force n = R K3 (R^T p_s - q_bar) at the midpoints.
pub fn internal_force(grid: &GridSpec, p: &[Vec2], theta: &[f64], params: &RodParams) -> Field2 {
    let (e, th) = midpoint_frames(grid, p, theta);
    e.iter()
        .zip(&th)
        .map(|(e, &t)| {
            let r = rotation_matrix(t);
            r * params.k3 * (r.transpose() * e - params.q_bar)
        })
        .collect()
}

/// Nodal shear/rotation coupling  p_s^ R K5 (R^T p_s - q_bar).
///
/// Each midpoint couple is split evenly between its two nodes, which is what
/// the midpoint angle average implies for the work done; dividing by the
/// nodal mass turns that into a plain average inside and the last midpoint
/// value at the half-mass tip node.
pub fn coupling(grid: &GridSpec, p: &[Vec2], theta: &[f64], params: &RodParams) -> Field1 {
    let (e, th) = midpoint_frames(grid, p, theta);
    let ch: Field1 = e
        .iter()
        .zip(&th)
        .map(|(e, &t)| {
            let r = rotation_matrix(t);
            let f = r * ((r.transpose() * e - params.q_bar) * params.k5);
            hat2(*e).dot(&f)
        })
        .collect();
    let n = grid.n;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = 0.5 * (ch[i - 1] + ch[i]);
    }
    out[n - 1] = ch[n - 2];
    out
}

/// Discrete theta_ss with the tip slope prescribed.
pub fn second_derivative(grid: &GridSpec, f: &[f64], tip_slope: f64) -> Field1 {
    divergence(grid, &half_gradient(grid, f), tip_slope, 0.0)
}

pub fn translational_rhs(grid: &GridSpec, state: &RodState, params: &RodParams) -> Result<Field2> {
    check_len(grid, state.p.len())?;
    check_finite(state)?;
    let n = internal_force(grid, &state.p, &state.theta, params);
    let mut acc = divergence(grid, &n, Vector2::zeros(), Vector2::zeros());
    for a in acc.iter_mut().skip(1) {
        a.y += params.g;
    }
    Ok(acc)
}

pub fn rotational_rhs(
    grid: &GridSpec,
    state: &RodState,
    params: &RodParams,
    ctrl: &ControlSignal,
) -> Result<Field1> {
    check_len(grid, state.theta.len())?;
    check_len(grid, ctrl.m_c.len())?;
    check_len(grid, ctrl.m_c_s.len())?;
    check_finite(state)?;
    let tip_slope = ctrl.m_c[grid.n - 1] / (params.rho_j * params.k4);
    let th_ss = second_derivative(grid, &state.theta, tip_slope);
    let cpl = coupling(grid, &state.p, &state.theta, params);
    let mut acc: Field1 = (0..grid.n)
        .map(|i| params.k4 * th_ss[i] - ctrl.m_c_s[i] / params.rho_j + cpl[i])
        .collect();
    acc[0] = 0.0;
    Ok(acc)
}

static CFL_WARNED: AtomicBool = AtomicBool::new(false);

/// One kick-drift-kick step with the control held over the step.
pub fn step(
    grid: &GridSpec,
    state: &RodState,
    ctrl: &ControlSignal,
    params: &RodParams,
    dt: f64,
) -> Result<RodState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
    }
    let limit = params.cfl_limit(grid);
    if dt > limit && !CFL_WARNED.swap(true, Ordering::Relaxed) {
        tracing::warn!(dt, limit, "time step exceeds the CFL estimate");
    }

    let half = 0.5 * dt;
    let mut next = state.clone();
    let acc = translational_rhs(grid, &next, params)?;
    let alpha = rotational_rhs(grid, &next, params, ctrl)?;
    for i in 0..grid.n {
        next.v[i] += acc[i] * half;
        next.w[i] += alpha[i] * half;
        next.p[i] += next.v[i] * dt;
        next.theta[i] += next.w[i] * dt;
    }
    clamp_base(&mut next);
    next.t = state.t + dt;

    let acc = translational_rhs(grid, &next, params)?;
    let alpha = rotational_rhs(grid, &next, params, ctrl)?;
    for i in 0..grid.n {
        next.v[i] += acc[i] * half;
        next.w[i] += alpha[i] * half;
    }
    clamp_base(&mut next);
    check_finite(&next)?;
    Ok(next)
}

fn clamp_base(s: &mut RodState) {
    s.p[0] = Vector2::zeros();
    s.v[0] = Vector2::zeros();
    s.theta[0] = 0.0;
    s.w[0] = 0.0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(0.5, 11).unwrap()
    }

    #[test]
    fn initial_state_is_straight() {
        let g = grid();
        let s = initial_state(&g);
        assert_eq!(s.p[10], Vector2::new(0.0, 0.5));
        assert!(s.theta.iter().all(|&t| rotation_matrix(t) == Mat2::identity()));
    }

    #[test]
    fn rest_is_equilibrium() {
        let g = grid();
        let s = initial_state(&g);
        let p = RodParams::default();
        // Node coordinates like 3*0.05 carry rounding, so "zero" means 1e-12.
        assert!(translational_rhs(&g, &s, &p).unwrap().iter().all(|a| a.norm() < 1e-12));
        let alpha = rotational_rhs(&g, &s, &p, &ControlSignal::zero(11)).unwrap();
        assert!(alpha.iter().all(|&a| a.abs() < 1e-12));
    }

    #[test]
    fn gravity_only() {
        let g = grid();
        let s = initial_state(&g);
        let p = RodParams { g: 9.81, ..Default::default() };
        let acc = translational_rhs(&g, &s, &p).unwrap();
        for a in &acc[1..] {
            assert!((a - Vector2::new(0.0, 9.81)).norm() < 1e-12);
        }
        let next = step(&g, &s, &ControlSignal::zero(11), &p, 0.005).unwrap();
        let gdt = Vector2::new(0.0, 9.81 * 0.005);
        // The drift shifts every free node by the same amount, so only the
        // first free node (next to the clamp) feels a strain change.
        for i in 2..11 {
            assert!((next.v[i] - gdt).norm() < 1e-12, "node {i}");
        }
        assert!((next.v[1] - gdt).norm() < 1e-2 * gdt.norm());
        for i in 0..11 {
            assert!((next.p[i] - s.p[i]).norm() < 1e-3);
        }
    }

    #[test]
    fn stretched_rod() {
        let g = grid();
        let mut s = initial_state(&g);
        for (i, p) in s.p.iter_mut().enumerate() {
            *p = Vector2::new(0.0, 1.2 * g.s(i));
        }
        let p = RodParams { g: 2.0, ..Default::default() };
        let acc = translational_rhs(&g, &s, &p).unwrap();
        for a in &acc[1..10] {
            assert!((a - Vector2::new(0.0, 2.0)).norm() < 1e-12);
        }
        // Constant axial stress 1.5*0.2 has nowhere to go past the tip.
        assert!((acc[10].y - (2.0 - 0.3 / 0.025)).abs() < 1e-10);
    }

    #[test]
    fn constant_input_derivative() {
        let g = grid();
        let s = initial_state(&g);
        let p = RodParams { rho_j: 2.0, ..Default::default() };
        let ctrl = ControlSignal { m_c: vec![0.0; 11], m_c_s: vec![0.7; 11] };
        let alpha = rotational_rhs(&g, &s, &p, &ctrl).unwrap();
        for a in &alpha[1..] {
            assert!((a + 0.35).abs() < 1e-15);
        }
    }

    #[test]
    fn bent_angle_probe_nodes() {
        let g = grid();
        let mut s = initial_state(&g);
        for i in 0..11 {
            s.theta[i] = 0.2 * g.s(i);
        }
        let p = RodParams::default();
        let alpha = rotational_rhs(&g, &s, &p, &ControlSignal::zero(11)).unwrap();
        // Straight centerline: p_s = (0,1), so p_s^ R K5 (R^T p_s - q_bar)
        // reduces to -K5 sin(theta) at each midpoint; theta_ss of a linear
        // field vanishes inside and the free tip sees slope 0.2 -> 0.
        let mid = |k: usize| -1.5 * (0.2 * (k as f64 + 0.5) * 0.05).sin();
        for i in [3usize, 6] {
            let expect = 0.5 * (mid(i - 1) + mid(i));
            assert!((alpha[i] - expect).abs() < 1e-13, "node {i}");
        }
        let expect_tip = -0.2 / 0.025 + mid(9);
        assert!((alpha[10] - expect_tip).abs() < 1e-12);
        // Continuum value at an interior node, to O(ds^2).
        assert!((alpha[5] + 1.5 * (0.2 * 0.25_f64).sin()).abs() < 1e-4);
    }

    #[test]
    fn non_finite_is_reported() {
        let g = grid();
        let mut s = initial_state(&g);
        s.theta[4] = f64::NAN;
        match translational_rhs(&g, &s, &RodParams::default()) {
            Err(Error::NonFinite { node, .. }) => assert_eq!(node, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rest_fixed_point_single_step() {
        let g = grid();
        let s = initial_state(&g);
        let next = step(&g, &s, &ControlSignal::zero(11), &RodParams::default(), 0.005).unwrap();
        for i in 0..11 {
            assert!((next.p[i] - s.p[i]).norm() < 1e-12);
            assert!(next.v[i].norm() < 1e-12);
            assert!(next.theta[i].abs() < 1e-12 && next.w[i].abs() < 1e-12);
        }
        assert_eq!(next.t, 0.005);
    }
}
