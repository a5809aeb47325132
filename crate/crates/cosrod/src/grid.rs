//! Spatial grid, planar rotation algebra and the discrete operators every
//! other module builds on.
//!
//! Two families of operators live here. The collocated ones (`diff`,
//! `integral_from_s`) act on nodal fields. The staggered ones (`half_gradient`,
//! `half_average`, `divergence`) move between nodes and the midpoints between
//! them; the dynamics uses them because the collocated second derivative
//! `A·A` does not see odd-even modes and leaves them undamped.

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::error::{Error, Result};

pub type Field1 = Vec<f64>;
pub type Field2 = Vec<Vector2<f64>>;
pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub ell: f64,
    pub n: usize,
    pub ds: f64,
}

impl GridSpec {
    pub fn new(ell: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("grid needs at least 3 nodes, got {n}")));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::Config(format!("rod length must be positive, got {ell}")));
        }
        Ok(Self { ell, n, ds: ell / (n - 1) as f64 })
    }

    /// Arc-length coordinate of every node.
    pub fn nodes(&self) -> Field1 {
        (0..self.n).map(|i| self.s(i)).collect()
    }

    pub fn s(&self, i: usize) -> f64 {
        // The last node sits exactly on ell rather than on (n-1)*ds.
        if i + 1 == self.n {
            self.ell
        } else {
            i as f64 * self.ds
        }
    }

    /// Trapezoid weights: ds inside, ds/2 at both ends.
    pub fn trapezoid_weights(&self) -> Field1 {
        let mut w = vec![self.ds; self.n];
        w[0] = 0.5 * self.ds;
        w[self.n - 1] = 0.5 * self.ds;
        w
    }
}

pub fn rotation_matrix(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Planar hat map: (p2, p3) -> (-p3, p2).
pub fn hat2(p: Vec2) -> Vec2 {
    Vector2::new(-p.y, p.x)
}

/// Wrap an angle into [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    // rem_euclid can round up to exactly two_pi for tiny negative inputs.
    if r >= std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Dense differentiation matrix: second-order central differences inside,
/// second-order one-sided stencils at both ends.
pub fn differentiation_matrix(grid: &GridSpec) -> DMatrix<f64> {
    let n = grid.n;
    let h = grid.ds;
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n - 1 {
        a[(i, i - 1)] = -0.5 / h;
        a[(i, i + 1)] = 0.5 / h;
    }
    a[(0, 0)] = -1.5 / h;
    a[(0, 1)] = 2.0 / h;
    a[(0, 2)] = -0.5 / h;
    a[(n - 1, n - 3)] = 0.5 / h;
    a[(n - 1, n - 2)] = -2.0 / h;
    a[(n - 1, n - 1)] = 1.5 / h;
    a
}

/// One-sided second-order derivative at the base node.
#[inline]
pub fn diff_base<T>(grid: &GridSpec, f: &[T]) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    (f[1] * 2.0 - f[0] * 1.5 - f[2] * 0.5) * (1.0 / grid.ds)
}

/// One-sided second-order derivative at the tip node.
#[inline]
pub fn diff_tip<T>(grid: &GridSpec, f: &[T]) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let n = f.len();
    (f[n - 1] * 1.5 - f[n - 2] * 2.0 + f[n - 3] * 0.5) * (1.0 / grid.ds)
}

/// Matrix-free application of `differentiation_matrix`.
pub fn diff<T>(grid: &GridSpec, f: &[T]) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let n = f.len();
    debug_assert_eq!(n, grid.n);
    let inv2h = 0.5 / grid.ds;
    let mut out = Vec::with_capacity(n);
    out.push(diff_base(grid, f));
    for i in 1..n - 1 {
        out.push((f[i + 1] - f[i - 1]) * inv2h);
    }
    out.push(diff_tip(grid, f));
    out
}

/// Trapezoidal approximation of the integral from s_i to ell at every node.
pub fn integral_from_s(grid: &GridSpec, f: &[f64]) -> Field1 {
    let n = f.len();
    let mut out = vec![0.0; n];
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] + 0.5 * grid.ds * (f[i] + f[i + 1]);
    }
    out
}

/// Trapezoid integral over the whole rod.
pub fn integrate(grid: &GridSpec, f: &[f64]) -> f64 {
    let n = f.len();
    let inner: f64 = f[1..n - 1].iter().sum();
    grid.ds * (inner + 0.5 * (f[0] + f[n - 1]))
}

/// Forward differences onto the n-1 midpoints.
pub fn half_gradient<T>(grid: &GridSpec, f: &[T]) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Sub<Output = T>,
{
    let inv = 1.0 / grid.ds;
    f.windows(2).map(|w| (w[1] - w[0]) * inv).collect()
}

/// Averages onto the n-1 midpoints.
pub fn half_average(f: &[f64]) -> Field1 {
    f.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Nodal divergence of a midpoint flux field. Interior nodes use a centered
/// difference, the tip closes the last half cell with the prescribed tip flux.
/// Row 0 is left at zero: the base is clamped.
pub fn divergence<T>(grid: &GridSpec, fh: &[T], ftip: T, zero: T) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Sub<Output = T>,
{
    let n = fh.len() + 1;
    let inv = 1.0 / grid.ds;
    let mut out = vec![zero; n];
    for i in 1..n - 1 {
        out[i] = (fh[i] - fh[i - 1]) * inv;
    }
    out[n - 1] = (ftip - fh[n - 2]) * (2.0 * inv);
    out
}
