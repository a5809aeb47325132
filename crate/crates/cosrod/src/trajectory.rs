//! Desired centerline trajectories and the tip regulation that makes them
//! admissible for the free end.

use nalgebra::Vector2;

use crate::dynamics::{check_len, RodState};
use crate::error::{Error, Result};
use crate::grid::{diff_tip, Field2, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    pub p_star: Field2,
    pub p_star_t: Field2,
    pub p_star_tt: Field2,
}

impl DesiredTrajectory {
    pub fn fixed(p_star: Field2) -> Self {
        let n = p_star.len();
        Self { p_star, p_star_t: vec![Vector2::zeros(); n], p_star_tt: vec![Vector2::zeros(); n] }
    }
}

/// Static constant-curvature arc leaving the base along +z and bending
/// towards +y. Zero curvature gives the straight rod.
pub fn make_bent_target(grid: &GridSpec, curvature: f64) -> Result<DesiredTrajectory> {
    if !curvature.is_finite() || (curvature * grid.ell).abs() >= std::f64::consts::PI {
        return Err(Error::Invalid(format!("|curvature * ell| must be below pi, got curvature {curvature}")));
    }
    let p = grid
        .nodes()
        .into_iter()
        .map(|s| {
            if curvature == 0.0 {
                Vector2::new(0.0, s)
            } else {
                // 1 - cos(x) written as 2 sin^2(x/2) to stay accurate for small x.
                let half = (0.5 * curvature * s).sin();
                Vector2::new(2.0 * half * half / curvature, (curvature * s).sin() / curvature)
            }
        })
        .collect();
    Ok(DesiredTrajectory::fixed(p))
}

/// Bend the last `blend_width` of the target so its discrete tip slope
/// matches the rod's current tip slope.
///
/// The correction is `h(s) * delta` with `h = b (x^3 - x^2)`, `x` running from
/// 0 to 1 over the blend window. `h` and `h'` vanish where the window starts,
/// `h` vanishes at the tip, so the tip position and everything before the
/// window are untouched. `delta` is solved against the same one-sided
/// stencil that measures the tip slope, so the match is exact.
pub fn regulate_tip(
    grid: &GridSpec,
    traj: &DesiredTrajectory,
    state: &RodState,
    blend_width: f64,
) -> Result<DesiredTrajectory> {
    check_len(grid, traj.p_star.len())?;
    check_len(grid, state.p.len())?;
    if !(blend_width > grid.ds && blend_width < 0.5 * grid.ell) {
        return Err(Error::Invalid(format!(
            "blend width must lie in (ds, ell/2) = ({}, {}), got {blend_width}",
            grid.ds,
            0.5 * grid.ell
        )));
    }
    let start = grid.ell - blend_width;
    let h: Vec<f64> = grid
        .nodes()
        .into_iter()
        .map(|s| {
            let mut x = ((s - start) / blend_width).clamp(0.0, 1.0);
            // Nodes that sit on either window end up to rounding stay untouched.
            if x < 1e-9 {
                x = 0.0;
            } else if x > 1.0 - 1e-9 {
                x = 1.0;
            }
            blend_width * (x * x * x - x * x)
        })
        .collect();
    let dh = diff_tip(grid, &h);
    let slope_gap = diff_tip(grid, &state.p) - diff_tip(grid, &traj.p_star);
    let delta = slope_gap / dh;
    let mut out = traj.clone();
    for (p, hi) in out.p_star.iter_mut().zip(&h) {
        if *hi != 0.0 {
            *p += delta * *hi;
        }
    }
    Ok(out)
}
