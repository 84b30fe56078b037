//! Inner unconstrained solvers for the ADMM local updates.
//!
//! Both solvers take closures that return `None` when the objective is
//! undefined at a point (a projection fell below the depth guard); such
//! trial points are rejected like any other non-improving step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub lbfgs_memory: usize,
    /// Backtracking contraction factor.
    pub ls_contraction: f64,
    /// Armijo sufficient-decrease constant.
    pub ls_sufficient_decrease: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            lbfgs_memory: 8,
            ls_contraction: 0.5,
            ls_sufficient_decrease: 1e-4,
        }
    }
}

impl InnerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1
            || !(self.grad_tol > 0.0)
            || !(self.step_tol > 0.0)
            || self.lbfgs_memory < 1
            || !(self.ls_contraction > 0.0 && self.ls_contraction < 1.0)
            || !(self.ls_sufficient_decrease > 0.0 && self.ls_sufficient_decrease < 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "invalid inner solver options: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    /// No trial step decreased the objective.
    Stalled,
    LineSearchFailed,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(self, Status::GradientTolerance | Status::StepTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: Status,
}

const MAX_DAMPING_TRIES: usize = 40;

/// Gauss-Newton on `Σ r(x)²`.
///
/// Each iteration solves `JᵀJ δ = -Jᵀr`. If that system is singular or the
/// step does not decrease the cost, Levenberg damping `μ·diag(JᵀJ)` is added
/// and escalated until a decreasing step is found.
pub fn gauss_newton<R, J>(residual_fn: R, jacobian_fn: J, x0: &DVector<f64>, opts: &InnerOptions) -> Result<Solution>
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Option<DMatrix<f64>>,
{
    let mut x = x0.clone();
    let mut r = residual_fn(&x).ok_or(Error::depth(f64::NAN))?;
    let mut cost = r.norm_squared();
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let jac = jacobian_fn(&x).ok_or(Error::depth(f64::NAN))?;
        let grad = jac.tr_mul(&r);
        if grad.amax() < opts.grad_tol {
            status = Status::GradientTolerance;
            break;
        }
        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let rhs = -&grad;
        let diag_scale = jtj.diagonal().amax().max(f64::MIN_POSITIVE);

        let mut mu = 0.0;
        let mut accepted = None;
        let mut any_solve = false;
        for _ in 0..MAX_DAMPING_TRIES {
            let mut a = jtj.clone();
            if mu > 0.0 {
                for k in 0..a.nrows() {
                    let d = a[(k, k)].max(1e-12 * diag_scale);
                    a[(k, k)] += mu * d;
                }
            }
            if let Some(chol) = a.cholesky() {
                any_solve = true;
                let step = chol.solve(&rhs);
                let trial = &x + &step;
                if let Some(rt) = residual_fn(&trial) {
                    let ct = rt.norm_squared();
                    if ct <= cost {
                        accepted = Some((step, trial, rt, ct));
                        break;
                    }
                }
            }
            mu = if mu == 0.0 { 1e-4 } else { mu * 10.0 };
        }

        match accepted {
            Some((step, trial, rt, ct)) => {
                let small = step.norm() <= opts.step_tol * (1.0 + x.norm());
                x = trial;
                r = rt;
                cost = ct;
                if small {
                    status = Status::StepTolerance;
                    break;
                }
            }
            None if !any_solve => return Err(Error::SingularSystem),
            None => {
                status = Status::Stalled;
                break;
            }
        }
    }
    Ok(Solution {
        x,
        cost,
        iterations,
        status,
    })
}

/// L-BFGS with backtracking Armijo line search. The objective never
/// increases; on line-search failure the best iterate is returned with
/// [`Status::LineSearchFailed`].
pub fn lbfgs<V, G>(value_fn: V, grad_fn: G, x0: &DVector<f64>, opts: &InnerOptions) -> Result<Solution>
where
    V: Fn(&DVector<f64>) -> Option<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = x0.clone();
    let mut f = value_fn(&x).ok_or(Error::depth(f64::NAN))?;
    let mut g = grad_fn(&x);
    let mut s_hist: Vec<DVector<f64>> = Vec::with_capacity(opts.lbfgs_memory);
    let mut y_hist: Vec<DVector<f64>> = Vec::with_capacity(opts.lbfgs_memory);
    let mut rho_hist: Vec<f64> = Vec::with_capacity(opts.lbfgs_memory);
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if g.amax() < opts.grad_tol {
            status = Status::GradientTolerance;
            break;
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * s_hist[i].dot(&q);
            q.axpy(-alpha[i], &y_hist[i], 1.0);
        }
        let gamma = if k > 0 {
            s_hist[k - 1].dot(&y_hist[k - 1]) / y_hist[k - 1].norm_squared()
        } else {
            1.0 / g.norm().max(1.0)
        };
        q *= gamma;
        for i in 0..k {
            let beta = rho_hist[i] * y_hist[i].dot(&q);
            q.axpy(alpha[i] - beta, &s_hist[i], 1.0);
        }
        let mut dir = -q;
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = -&g / g.norm().max(1.0);
            slope = g.dot(&dir);
        }

        let mut t = 1.0;
        let mut found = None;
        for _ in 0..60 {
            let trial = &x + &dir * t;
            if let Some(ft) = value_fn(&trial) {
                if ft <= f + opts.ls_sufficient_decrease * t * slope {
                    found = Some((trial, ft));
                    break;
                }
            }
            t *= opts.ls_contraction;
        }
        let Some((trial, ft)) = found else {
            status = Status::LineSearchFailed;
            break;
        };

        let gt = grad_fn(&trial);
        let s = &trial - &x;
        let y = &gt - &g;
        let sy = s.dot(&y);
        let small = s.norm() <= opts.step_tol * (1.0 + x.norm());
        x = trial;
        f = ft;
        g = gt;
        if sy > 1e-12 * s.norm() * y.norm() {
            if s_hist.len() == opts.lbfgs_memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        if small {
            status = Status::StepTolerance;
            break;
        }
    }
    Ok(Solution {
        x,
        cost: f,
        iterations,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(max_iters: usize) -> InnerOptions {
        InnerOptions {
            max_iters,
            ..Default::default()
        }
    }

    #[test]
    fn gauss_newton_solves_linear_least_squares_in_one_step() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 2.0, 4.0]);
        let sol = gauss_newton(
            |x| Some(&a * x - &b),
            |_| Some(a.clone()),
            &DVector::zeros(2),
            &opts(10),
        )
        .unwrap();
        // normal equations: [4 6; 6 14] x = [9; 20] -> x = (0.9, 1.045...)
        let expected = (a.transpose() * &a).lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((&sol.x - expected).amax() < 1e-12);
        // the one solving step plus the step-size / gradient check
        assert!(sol.iterations <= 2);
        assert!(sol.status.converged());
    }

    #[test]
    fn gauss_newton_stationary_start() {
        let sol = gauss_newton(
            |x: &DVector<f64>| Some(x.map(|v| v - 1.0)),
            |x: &DVector<f64>| Some(DMatrix::identity(x.len(), x.len())),
            &DVector::from_element(3, 1.0),
            &opts(10),
        )
        .unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.status, Status::GradientTolerance);
        assert_eq!(sol.x, DVector::from_element(3, 1.0));
    }

    #[test]
    fn gauss_newton_damps_rank_deficient_systems() {
        // r = (x0 + x1 - 2): JᵀJ is singular
        let sol = gauss_newton(
            |x| Some(DVector::from_vec(vec![x[0] + x[1] - 2.0])),
            |_| Some(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])),
            &DVector::zeros(2),
            &opts(20),
        )
        .unwrap();
        assert!(sol.cost < 1e-16, "{sol:?}");
    }

    #[test]
    fn gauss_newton_never_increases_cost() {
        // Rosenbrock in residual form
        let res = |x: &DVector<f64>| Some(DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]));
        let jac = |x: &DVector<f64>| Some(DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]));
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let c0 = res(&x0).unwrap().norm_squared();
        for it in 1..8 {
            let sol = gauss_newton(res, jac, &x0, &opts(it)).unwrap();
            assert!(sol.cost <= c0);
        }
    }

    #[test]
    fn gauss_newton_projection_subproblem_matches_grid_search() {
        use crate::geometry::{project, CameraParams, ProjectionGuard, ScenePoint};
        use nalgebra::Vector3;
        // refine the x/y coordinates of a point seen by two cameras
        let g = ProjectionGuard::default();
        let cams = [
            CameraParams::new([0.0, 0.1, 0.0], Vector3::new(0.2, 0.0, 5.0), 100.0).unwrap(),
            CameraParams::new([0.05, -0.2, 0.1], Vector3::new(-0.3, 0.1, 6.0), 100.0).unwrap(),
        ];
        let truth = ScenePoint::new(0.3, -0.2, 0.5);
        let z: Vec<_> = cams
            .iter()
            .map(|c| {
                let p = project(&truth, c, &g).unwrap();
                nalgebra::Vector2::new(p.u + 0.7, p.v - 0.4)
            })
            .collect();
        let cost_at = |x: f64, y: f64| -> f64 {
            cams.iter()
                .zip(&z)
                .map(|(c, zz)| (zz - project(&ScenePoint::new(x, y, 0.5), c, &g).unwrap().as_vector()).norm_squared())
                .sum()
        };
        let res = |v: &DVector<f64>| {
            let mut out = DVector::zeros(4);
            for (k, (c, zz)) in cams.iter().zip(&z).enumerate() {
                let r = zz - project(&ScenePoint::new(v[0], v[1], 0.5), c, &g).ok()?.as_vector();
                out[2 * k] = r.x;
                out[2 * k + 1] = r.y;
            }
            Some(out)
        };
        let jac = |v: &DVector<f64>| {
            let mut out = DMatrix::zeros(4, 2);
            for (k, c) in cams.iter().enumerate() {
                let (jx, _) = crate::geometry::projection_jacobians(&ScenePoint::new(v[0], v[1], 0.5), c, &g).ok()?;
                for col in 0..2 {
                    out[(2 * k, col)] = -jx[(0, col)];
                    out[(2 * k + 1, col)] = -jx[(1, col)];
                }
            }
            Some(out)
        };
        let sol = gauss_newton(res, jac, &DVector::from_vec(vec![0.0, 0.0]), &opts(50)).unwrap();

        // brute-force oracle: coarse grid followed by successively finer grids
        let (mut cx, mut cy, mut span) = (0.0, 0.0, 1.0);
        for _ in 0..12 {
            let mut best = (f64::INFINITY, cx, cy);
            for a in -20..=20 {
                for b in -20..=20 {
                    let (x, y) = (cx + span * a as f64 / 20.0, cy + span * b as f64 / 20.0);
                    let c = cost_at(x, y);
                    if c < best.0 {
                        best = (c, x, y);
                    }
                }
            }
            cx = best.1;
            cy = best.2;
            span /= 8.0;
        }
        let brute = cost_at(cx, cy);
        assert!((sol.cost - brute).abs() < 1e-6, "gn {} brute {}", sol.cost, brute);
    }

    #[test]
    fn lbfgs_quadratic() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let c2 = c.clone();
        let sol = lbfgs(
            |x| Some((x - &c).norm_squared()),
            |x| 2.0 * (x - &c2),
            &DVector::zeros(4),
            &opts(100),
        )
        .unwrap();
        assert!((&sol.x - &c).amax() < 1e-8);
        assert!((2.0 * (&sol.x - &c)).norm() < 1e-8);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let f = |x: &DVector<f64>| Some(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let g = |x: &DVector<f64>| {
            DVector::from_vec(vec![
                -400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ])
        };
        let o = InnerOptions {
            max_iters: 200,
            step_tol: 1e-14,
            ..Default::default()
        };
        let sol = lbfgs(f, g, &DVector::from_vec(vec![-1.2, 1.0]), &o).unwrap();
        assert!(sol.iterations <= 200);
        assert!(
            (sol.x[0] - 1.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6,
            "{sol:?}"
        );
    }

    #[test]
    fn lbfgs_stationary_start() {
        let x0 = DVector::from_vec(vec![0.3, 0.4]);
        let sol = lbfgs(|_| Some(1.0), |x| DVector::zeros(x.len()), &x0, &opts(10)).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, x0);
    }

    #[test]
    fn lbfgs_is_monotone_with_infeasible_regions() {
        // undefined for x0 < -0.5, minimum at x0 = -1 is outside the domain
        let f = |x: &DVector<f64>| {
            if x[0] < -0.5 {
                None
            } else {
                Some((x[0] + 1.0).powi(2) + x[1] * x[1])
            }
        };
        let g = |x: &DVector<f64>| DVector::from_vec(vec![2.0 * (x[0] + 1.0), 2.0 * x[1]]);
        let x0 = DVector::from_vec(vec![2.0, 1.0]);
        let f0 = f(&x0).unwrap();
        let sol = lbfgs(f, g, &x0, &opts(50)).unwrap();
        assert!(sol.cost <= f0);
        assert!(sol.x[0] >= -0.5);
    }

    #[test]
    fn options_validation() {
        assert!(InnerOptions::default().validate().is_ok());
        assert!(InnerOptions {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(InnerOptions {
            grad_tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
