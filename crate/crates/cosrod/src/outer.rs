//! Outer loop: per-step solve for the desired rotation field and the
//! damping gains that make the translational error a damped wave.
//!
//! The discrete equation, one per node and component, is
//!
//! ```text
//! D[R* K3 R*^T a - R* b] + Kv c + d = 0
//! ```
//!
//! with `a = p_s` and the bracket evaluated on the midpoints, `D` the same
//! divergence the dynamics uses (zero force flux past the tip). Row 0 of each
//! component is replaced by the clamp `theta*(0) = 0`, and one more row asks
//! the tip slope of `theta*` to match the rod's.
//!
//! Unknowns are `x = [theta*, y1, y2]` with `Kv^i = EPS + softplus(y^i)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::dynamics::{check_len, RodParams, RodState};
use crate::error::{Error, Result};
use crate::grid::{
    diff_tip, divergence, half_average, half_gradient, rotation_matrix, wrap_angle, Field1, Field2, GridSpec,
    Mat2, Vec2,
};
use crate::lm::{self, LeastSquares, LmOptions, Penalty};
use crate::trajectory::DesiredTrajectory;

/// Lower bound added to the softplus gains.
pub const KV_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OuterGains {
    pub k_q: Mat2,
    pub k_p: Mat2,
}

fn is_spd(m: &Mat2) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-14 * m.abs().max() && m.symmetric_eigenvalues().min() > 0.0
}

impl OuterGains {
    pub fn new(k_q: Mat2, k_p: Mat2) -> Result<Self> {
        if !is_spd(&k_q) || !is_spd(&k_p) {
            return Err(Error::Config("K_q and K_p must be symmetric positive definite".into()));
        }
        Ok(Self { k_q, k_p })
    }
}

impl Default for OuterGains {
    fn default() -> Self {
        Self { k_q: Mat2::identity(), k_p: Mat2::identity() * 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterSolution {
    /// Wrapped into [-pi, pi).
    pub theta_star: Field1,
    pub kv1: Field1,
    pub kv2: Field1,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("outer solve did not converge: residual {:.3e} after {} iterations", .best.residual_norm, .best.iterations)]
pub struct NotConverged {
    /// Best iterate found; usable as a degraded solution.
    pub best: OuterSolution,
}

impl From<NotConverged> for Error {
    fn from(e: NotConverged) -> Self {
        Error::NotConverged { residual_norm: e.best.residual_norm, iterations: e.best.iterations }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OuterHistory {
    entries: VecDeque<(f64, OuterSolution)>,
}

impl OuterHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a solution; times must increase with a constant spacing.
    pub fn push(&mut self, t: f64, sol: OuterSolution) -> Result<()> {
        if let Some(&(last, _)) = self.entries.back() {
            if t <= last {
                return Err(Error::Invalid(format!("history time {t} does not follow {last}")));
            }
            if self.entries.len() >= 2 {
                let prev = self.entries[self.entries.len() - 2].0;
                let (h0, h1) = (last - prev, t - last);
                if (h1 - h0).abs() > 1e-9 * h0.max(h1) {
                    return Err(Error::Invalid(format!("non-uniform history spacing {h0} vs {h1}")));
                }
            }
        }
        if self.entries.len() == 3 {
            self.entries.pop_front();
        }
        self.entries.push_back((t, sol));
        Ok(())
    }

    pub fn latest(&self) -> Option<&OuterSolution> {
        self.entries.back().map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Coefficient fields of the outer equation. `a` lives on the midpoints;
/// `b` is constant along the rod.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFields {
    pub a: Field2,
    pub b: Vec2,
    pub c: Field2,
    pub d: Field2,
    /// Current rod angles, used for the cold start.
    pub theta: Field1,
    /// Rod tip slope theta_s(l), target of the trackability row.
    pub theta_s_tip: f64,
}

pub fn build_residual_fields(
    grid: &GridSpec,
    state: &RodState,
    traj: &DesiredTrajectory,
    gains: &OuterGains,
    params: &RodParams,
) -> Result<ResidualFields> {
    check_len(grid, state.p.len())?;
    check_len(grid, traj.p_star.len())?;
    let n = grid.n;
    let pt: Field2 = (0..n).map(|i| state.p[i] - traj.p_star[i]).collect();
    let c: Field2 = (0..n).map(|i| state.v[i] - traj.p_star_t[i]).collect();
    let flux: Field2 = half_gradient(grid, &pt).into_iter().map(|e| gains.k_q * e).collect();
    let tip_flux = gains.k_q * diff_tip(grid, &pt);
    let wave = divergence(grid, &flux, tip_flux, Vector2::zeros());
    let gravity = Vector2::new(0.0, params.g);
    let mut d: Field2 = (0..n).map(|i| gravity - traj.p_star_tt[i] - wave[i] + gains.k_p * pt[i]).collect();
    d[0] = Vector2::zeros();
    Ok(ResidualFields {
        a: half_gradient(grid, &state.p),
        b: params.k3 * params.q_bar,
        c,
        d,
        theta: state.theta.clone(),
        theta_s_tip: diff_tip(grid, &state.theta),
    })
}

pub fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

pub fn softplus_inv(v: f64) -> f64 {
    // Valid for v > 0; large v is its own inverse to machine precision.
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Bracketed midpoint field R* K3 R*^T a - R* b.
fn bracket(grid: &GridSpec, theta_star: &[f64], f: &ResidualFields, k3: &Mat2) -> Field2 {
    let th = half_average(theta_star);
    debug_assert_eq!(th.len(), grid.n - 1);
    th.iter()
        .zip(&f.a)
        .map(|(&t, a)| {
            let r = rotation_matrix(t);
            r * k3 * r.transpose() * a - r * f.b
        })
        .collect()
}

/// Stacked residual, length 2N + 1.
pub fn outer_residual(
    grid: &GridSpec,
    theta_star: &[f64],
    kv1: &[f64],
    kv2: &[f64],
    fields: &ResidualFields,
    k3: &Mat2,
) -> DVector<f64> {
    let n = grid.n;
    let div = divergence(grid, &bracket(grid, theta_star, fields, k3), Vector2::zeros(), Vector2::zeros());
    let mut r = DVector::zeros(2 * n + 1);
    for i in 0..n {
        r[i] = div[i].x + kv1[i] * fields.c[i].x + fields.d[i].x;
        r[n + i] = div[i].y + kv2[i] * fields.c[i].y + fields.d[i].y;
    }
    r[0] = theta_star[0];
    r[n] = theta_star[0];
    r[2 * n] = diff_tip(grid, theta_star) - fields.theta_s_tip;
    r
}

/// The outer equation as a least-squares problem in `x = [theta*, y1, y2]`.
pub struct OuterProblem<'a> {
    pub grid: &'a GridSpec,
    pub fields: &'a ResidualFields,
    pub k3: &'a Mat2,
}

impl OuterProblem<'_> {
    fn split<'x>(&self, x: &'x DVector<f64>) -> (&'x [f64], Field1, Field1) {
        let n = self.grid.n;
        let s = x.as_slice();
        let kv = |y: &[f64]| y.iter().map(|&v| KV_EPS + softplus(v)).collect::<Field1>();
        (&s[..n], kv(&s[n..2 * n]), kv(&s[2 * n..]))
    }
}

impl LeastSquares for OuterProblem<'_> {
    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let (th, k1, k2) = self.split(x);
        outer_residual(self.grid, th, &k1, &k2, self.fields, self.k3)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let grid = self.grid;
        let n = grid.n;
        let inv = 1.0 / grid.ds;
        let th = half_average(&x.as_slice()[..n]);
        let rot90 = Mat2::new(0.0, -1.0, 1.0, 0.0);
        // d(bracket_h)/d(theta*_h), with dR/dtheta = R J.
        let dbr: Field2 = th
            .iter()
            .zip(&self.fields.a)
            .map(|(&t, a)| {
                let r = rotation_matrix(t);
                let rj = r * rot90;
                rj * self.k3 * r.transpose() * a + r * self.k3 * rj.transpose() * a - rj * self.fields.b
            })
            .collect();
        let mut j = DMatrix::zeros(2 * n + 1, 3 * n);
        // Node i sees midpoints i-1 (weight -1/ds) and i (weight +1/ds);
        // the tip only its last midpoint, with weight -2/ds.
        let mut add = |row: usize, h: usize, w: f64| {
            for (comp, off) in [(0usize, 0usize), (1, n)] {
                let v = w * dbr[h][comp] * 0.5;
                j[(off + row, h)] += v;
                j[(off + row, h + 1)] += v;
            }
        };
        for i in 1..n - 1 {
            add(i, i, inv);
            add(i, i - 1, -inv);
        }
        add(n - 1, n - 2, -2.0 * inv);
        for i in 0..n {
            j[(i, n + i)] = sigmoid(x[n + i]) * self.fields.c[i].x;
            j[(n + i, 2 * n + i)] = sigmoid(x[2 * n + i]) * self.fields.c[i].y;
        }
        for row in [0, n] {
            j.row_mut(row).fill(0.0);
            j[(row, 0)] = 1.0;
        }
        let h = grid.ds;
        j[(2 * n, n - 3)] = 0.5 / h;
        j[(2 * n, n - 2)] = -2.0 / h;
        j[(2 * n, n - 1)] = 1.5 / h;
        j
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterOptions {
    /// Convergence means residual_norm < tolerance * sqrt(2N).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the proximal term |x - x_prev|^2.
    pub tikhonov: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 200, tikhonov: 1e-8 }
    }
}

/// Undo per-node wrapping by walking from the clamped base along the rod.
pub fn unwrap_along_rod(theta: &[f64]) -> Field1 {
    let mut out = Vec::with_capacity(theta.len());
    let mut prev = 0.0;
    for (i, &t) in theta.iter().enumerate() {
        let v = if i == 0 { t } else { prev + wrap_angle(t - prev) };
        out.push(v);
        prev = v;
    }
    out
}

/// Starting point: the previous solution when there is one, else theta* =
/// the rod's angles with unit gains.
pub fn initial_guess(grid: &GridSpec, fields: &ResidualFields, history: &OuterHistory) -> DVector<f64> {
    let n = grid.n;
    let mut x = DVector::zeros(3 * n);
    match history.latest() {
        Some(prev) => {
            let th = unwrap_along_rod(&prev.theta_star);
            for i in 0..n {
                x[i] = th[i];
                x[n + i] = softplus_inv(prev.kv1[i] - KV_EPS);
                x[2 * n + i] = softplus_inv(prev.kv2[i] - KV_EPS);
            }
        }
        None => {
            let y = softplus_inv(1.0 - KV_EPS);
            for i in 0..n {
                x[i] = fields.theta[i];
                x[n + i] = y;
                x[2 * n + i] = y;
            }
        }
    }
    x[0] = 0.0;
    x
}

/// Solve from an explicit starting point.
pub fn solve_outer_from(
    grid: &GridSpec,
    fields: &ResidualFields,
    k3: &Mat2,
    x0: DVector<f64>,
    opts: &OuterOptions,
) -> std::result::Result<OuterSolution, NotConverged> {
    let n = grid.n;
    let dim = 3 * n;
    let problem = OuterProblem { grid, fields, k3 };

    let mut fixed = vec![false; dim];
    fixed[0] = true;
    let target = opts.tolerance * ((2 * n) as f64).sqrt();

    // Anchored pass: the proximal term picks the member of a flat valley
    // closest to the warm start. It also shifts the minimizer, by roughly
    // tikhonov * |x - x0| / sigma_min, which can sit above the tolerance, so
    // a stall is followed by an unanchored polish from where it stopped.
    let mut rep = lm::solve(
        &problem,
        x0.clone(),
        &fixed,
        &penalty(n, opts, Some(&x0)),
        LmOptions { target, max_iterations: opts.max_iterations },
    );
    let left = opts.max_iterations.saturating_sub(rep.iterations);
    if !rep.converged && opts.tikhonov > 0.0 && left > 0 {
        let polish =
            lm::solve(&problem, rep.x.clone(), &fixed, &penalty(n, opts, None), LmOptions { target, max_iterations: left });
        if polish.residual_norm <= rep.residual_norm {
            rep = lm::LmReport { iterations: rep.iterations + polish.iterations, ..polish };
        } else {
            rep.iterations += polish.iterations;
        }
    }
    let x = rep.x.as_slice();
    let sol = OuterSolution {
        theta_star: x[..n].iter().map(|&t| wrap_angle(t)).collect(),
        kv1: x[n..2 * n].iter().map(|&y| KV_EPS + softplus(y)).collect(),
        kv2: x[2 * n..].iter().map(|&y| KV_EPS + softplus(y)).collect(),
        residual_norm: rep.residual_norm,
        iterations: rep.iterations,
    };
    if rep.converged {
        Ok(sol)
    } else {
        Err(NotConverged { best: sol })
    }
}

/// Proximal anchor rows sqrt(tikhonov) (x - x0); no rows without an anchor.
fn penalty(n: usize, opts: &OuterOptions, anchor: Option<&DVector<f64>>) -> Penalty {
    let dim = 3 * n;
    match anchor {
        Some(x0) => {
            let lam = opts.tikhonov.sqrt();
            Penalty { p: DMatrix::identity(dim, dim) * lam, q: x0 * lam }
        }
        None => Penalty { p: DMatrix::zeros(0, dim), q: DVector::zeros(0) },
    }
}

pub fn solve_outer(
    grid: &GridSpec,
    fields: &ResidualFields,
    history: &OuterHistory,
    k3: &Mat2,
    opts: &OuterOptions,
) -> std::result::Result<OuterSolution, NotConverged> {
    solve_outer_from(grid, fields, k3, initial_guess(grid, fields, history), opts)
}

/// Backward differences of the history, nearest branch. Missing history
/// gives zeros.
pub fn estimate_theta_star_derivatives(history: &OuterHistory, dt: f64) -> (Field1, Field1) {
    let e = &history.entries;
    let n = e.back().map_or(0, |(_, s)| s.theta_star.len());
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let k = e.len();
    if k >= 2 {
        let (a, b) = (&e[k - 1].1.theta_star, &e[k - 2].1.theta_star);
        for i in 0..n {
            d1[i] = wrap_angle(a[i] - b[i]) / dt;
        }
    }
    if k >= 3 {
        let (a, b, c) = (&e[k - 1].1.theta_star, &e[k - 2].1.theta_star, &e[k - 3].1.theta_star);
        for i in 0..n {
            d2[i] = (wrap_angle(a[i] - b[i]) - wrap_angle(b[i] - c[i])) / (dt * dt);
        }
    }
    (d1, d2)
}

/// Critically damped second-order command filter on theta*.
///
/// An alternative to differencing the solve history: the inner loop tracks
/// the filter output, whose first and second derivatives are known exactly.
#[derive(Debug, Clone)]
pub struct CommandFilter {
    omega: f64,
    z: Field1,
    zd: Field1,
}

impl CommandFilter {
    pub fn new(omega: f64, theta0: &[f64]) -> Self {
        Self { omega, z: theta0.to_vec(), zd: vec![0.0; theta0.len()] }
    }

    /// Returns (theta*, theta*_t, theta*_tt) for this step and advances the
    /// filter by `dt` towards `raw`.
    pub fn update(&mut self, raw: &[f64], dt: f64) -> (Field1, Field1, Field1) {
        let w = self.omega;
        let target: Field1 = raw.iter().zip(&self.z).map(|(&r, &z)| z + wrap_angle(r - z)).collect();
        let accel = |z: &[f64], zd: &[f64]| -> Field1 {
            (0..z.len()).map(|i| w * w * (target[i] - z[i]) - 2.0 * w * zd[i]).collect()
        };
        let out = (self.z.clone(), self.zd.clone(), accel(&self.z, &self.zd));
        const SUBSTEPS: usize = 10;
        let h = dt / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            let a = accel(&self.z, &self.zd);
            for i in 0..self.z.len() {
                self.zd[i] += h * a[i];
                self.z[i] += h * self.zd[i];
            }
        }
        out
    }
}
