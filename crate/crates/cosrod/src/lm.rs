//! Small dense Levenberg-Marquardt solver.
//!
//! Minimizes `|r(x)|^2 + |P x - q|^2`. The quadratic penalty block carries
//! regularization such as a proximal anchor and is kept out of the
//! reported residual norm, which is what convergence is judged on.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct Penalty {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl Penalty {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.p * x - &self.q).norm_squared()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    /// Stop once |r| drops below this.
    pub target: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Run LM from `x0`. Coordinates flagged in `fixed` never move. The iterate
/// with the smallest residual norm seen is returned, so the result is never
/// worse than the starting point.
pub fn solve<P: LeastSquares>(
    problem: &P,
    x0: DVector<f64>,
    fixed: &[bool],
    penalty: &Penalty,
    opts: LmOptions,
) -> LmReport {
    let n = x0.len();
    let mut x = x0;
    let mut r = problem.residual(&x);
    let mut cost = r.norm_squared() + penalty.value(&x);
    let mut best = (x.clone(), r.norm());
    let ptp = penalty.p.transpose() * &penalty.p;
    let mut mu = 1e-3;
    let mut iterations = 0;

    while best.1 >= opts.target && iterations < opts.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&x);
        let mut h = j.transpose() * &j + &ptp;
        let mut g = j.transpose() * &r + penalty.p.transpose() * (&penalty.p * &x - &penalty.q);
        for k in 0..n {
            if fixed[k] {
                for m in 0..n {
                    h[(k, m)] = 0.0;
                    h[(m, k)] = 0.0;
                }
                h[(k, k)] = 1.0;
                g[k] = 0.0;
            }
        }

        let mut accepted = false;
        while mu < 1e16 {
            let mut damped = h.clone();
            for k in 0..n {
                damped[(k, k)] += mu;
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => match damped.lu().solve(&g) {
                    Some(s) => s,
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                },
            };
            let trial = &x - step;
            let tr = problem.residual(&trial);
            let tc = tr.norm_squared() + penalty.value(&trial);
            if tc.is_finite() && tc < cost {
                x = trial;
                r = tr;
                cost = tc;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        let rn = r.norm();
        if rn < best.1 {
            best = (x.clone(), rn);
        }
        if !accepted {
            break;
        }
    }

    LmReport { converged: best.1 < opts.target, residual_norm: best.1, x: best.0, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rosenbrock as residuals (1 - x, 10 (y - x^2)).
    struct Rosen;

    impl LeastSquares for Rosen {
        fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])])
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * x[0], 10.0])
        }
    }

    fn no_penalty(n: usize) -> Penalty {
        Penalty { p: DMatrix::zeros(0, n), q: DVector::zeros(0) }
    }

    #[test]
    fn rosenbrock() {
        let rep = solve(
            &Rosen,
            DVector::from_vec(vec![-1.2, 1.0]),
            &[false, false],
            &no_penalty(2),
            LmOptions { target: 1e-12, max_iterations: 200 },
        );
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-10 && (rep.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_coordinate_stays() {
        let rep = solve(
            &Rosen,
            DVector::from_vec(vec![0.5, 3.0]),
            &[true, false],
            &no_penalty(2),
            LmOptions { target: 1e-12, max_iterations: 50 },
        );
        assert_eq!(rep.x[0], 0.5);
        assert!((rep.x[1] - 0.25).abs() < 1e-8);
        assert!(!rep.converged);
    }

    #[test]
    fn already_solved_takes_no_iterations() {
        let rep = solve(
            &Rosen,
            DVector::from_vec(vec![1.0, 1.0]),
            &[false, false],
            &no_penalty(2),
            LmOptions { target: 1e-12, max_iterations: 50 },
        );
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }
}
