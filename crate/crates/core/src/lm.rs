//! Centralized Levenberg-Marquardt bundle adjustment.
//!
//! The normal equations are kept in their sparse block form: a 6×6 block per
//! camera (`U`), a 3×3 block per point (`V`) and a 6×3 coupling block per
//! observation (`W`). Steps are solved either through the Schur complement
//! on the camera block or, for verification, on the assembled dense system.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_with_jacobians, ProjectionGuard, ScenePoint};
use crate::problem::{mean_reprojection_error, parameter_mse, total_squared_error, ParamState, Problem};
use crate::trace::IterationRecord;

type Matrix6x3 = SMatrix<f64, 6, 3>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop once the total squared reprojection error falls below this.
    pub error_stop: f64,
    pub lambda_init: f64,
    pub lambda_max: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub use_schur: bool,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            error_stop: 1e-14,
            lambda_init: 1e-3,
            lambda_max: 1e16,
            lambda_up: 10.0,
            lambda_down: 10.0,
            use_schur: true,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init < self.lambda_max)
            || !(self.lambda_up > 1.0 && self.lambda_down > 1.0)
            || self.max_iters < 1
        {
            return Err(Error::InvalidParameter(format!("invalid LM options: {self:?}")));
        }
        Ok(())
    }
}

/// Block normal equations `JᵀJ δ = Jᵀe` for `e = z - f(x, y)`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub u: Vec<Matrix6<f64>>,
    pub v: Vec<Matrix3<f64>>,
    /// One coupling block per observation, in observation order.
    pub w: Vec<Matrix6x3>,
    pub g_cam: Vec<Vector6<f64>>,
    pub g_point: Vec<Vector3<f64>>,
    pub cost: f64,
}

pub fn normal_equations(problem: &Problem, state: &ParamState, guard: &ProjectionGuard) -> Result<NormalEquations> {
    let m = problem.num_cameras();
    let n = problem.num_points();
    let mut ne = NormalEquations {
        u: vec![Matrix6::zeros(); m],
        v: vec![Matrix3::zeros(); n],
        w: Vec::with_capacity(problem.num_observations()),
        g_cam: vec![Vector6::zeros(); m],
        g_point: vec![Vector3::zeros(); n],
        cost: 0.0,
    };
    for obs in problem.observations() {
        let (proj, jx, jy) = project_with_jacobians(&state.points[obs.point], &state.cameras[obs.camera], guard)
            .map_err(|e| e.at(obs.point, obs.camera))?;
        let e = obs.z.as_vector() - proj.as_vector();
        ne.cost += e.norm_squared();
        ne.u[obs.camera] += jy.transpose() * jy;
        ne.v[obs.point] += jx.transpose() * jx;
        ne.w.push(jy.transpose() * jx);
        ne.g_cam[obs.camera] += jy.transpose() * e;
        ne.g_point[obs.point] += jx.transpose() * e;
    }
    Ok(ne)
}

/// Damped step `(JᵀJ + λ·diag(JᵀJ)) δ = Jᵀe`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmStep {
    pub cameras: Vec<Vector6<f64>>,
    pub points: Vec<Vector3<f64>>,
}

impl LmStep {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(6 * self.cameras.len() + 3 * self.points.len());
        for (j, c) in self.cameras.iter().enumerate() {
            out.rows_mut(6 * j, 6).copy_from(c);
        }
        let off = 6 * self.cameras.len();
        for (i, p) in self.points.iter().enumerate() {
            out.rows_mut(off + 3 * i, 3).copy_from(p);
        }
        out
    }
}

fn damp<const D: usize>(a: &SMatrix<f64, D, D>, lambda: f64) -> SMatrix<f64, D, D> {
    let mut out = *a;
    for k in 0..D {
        out[(k, k)] += lambda * a[(k, k)].max(1e-12);
    }
    out
}

pub fn solve_step(problem: &Problem, ne: &NormalEquations, lambda: f64, use_schur: bool) -> Result<LmStep> {
    if use_schur {
        solve_schur(problem, ne, lambda)
    } else {
        solve_dense(problem, ne, lambda)
    }
}

fn solve_schur(problem: &Problem, ne: &NormalEquations, lambda: f64) -> Result<LmStep> {
    let m = problem.num_cameras();
    let n = problem.num_points();
    let v_inv: Vec<Matrix3<f64>> =
        ne.v.iter()
            .map(|v| {
                damp(v, lambda)
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or(Error::SingularSystem)
            })
            .collect::<Result<_>>()?;

    // coupling blocks grouped per point: (camera, W_ij)
    let mut per_point: Vec<Vec<(usize, Matrix6x3)>> = vec![Vec::new(); n];
    for (obs, w) in problem.observations().iter().zip(&ne.w) {
        per_point[obs.point].push((obs.camera, *w));
    }

    let mut s = DMatrix::zeros(6 * m, 6 * m);
    let mut rhs = DVector::zeros(6 * m);
    for j in 0..m {
        s.fixed_view_mut::<6, 6>(6 * j, 6 * j)
            .copy_from(&damp(&ne.u[j], lambda));
        rhs.fixed_rows_mut::<6>(6 * j).copy_from(&ne.g_cam[j]);
    }
    for (i, blocks) in per_point.iter().enumerate() {
        let vi = v_inv[i];
        for &(j, wj) in blocks {
            let wv = wj * vi;
            let mut r = rhs.fixed_rows_mut::<6>(6 * j);
            r -= wv * ne.g_point[i];
            for &(k, wk) in blocks {
                let mut blk = s.fixed_view_mut::<6, 6>(6 * j, 6 * k);
                blk -= wv * wk.transpose();
            }
        }
    }
    let dc = s.cholesky().ok_or(Error::SingularSystem)?.solve(&rhs);
    let cameras: Vec<Vector6<f64>> = (0..m).map(|j| dc.fixed_rows::<6>(6 * j).into_owned()).collect();
    let points = per_point
        .iter()
        .enumerate()
        .map(|(i, blocks)| {
            let mut b = ne.g_point[i];
            for &(j, w) in blocks {
                b -= w.transpose() * cameras[j];
            }
            v_inv[i] * b
        })
        .collect();
    Ok(LmStep { cameras, points })
}

fn solve_dense(problem: &Problem, ne: &NormalEquations, lambda: f64) -> Result<LmStep> {
    let m = problem.num_cameras();
    let n = problem.num_points();
    let dim = 6 * m + 3 * n;
    let off = 6 * m;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for j in 0..m {
        a.fixed_view_mut::<6, 6>(6 * j, 6 * j)
            .copy_from(&damp(&ne.u[j], lambda));
        b.fixed_rows_mut::<6>(6 * j).copy_from(&ne.g_cam[j]);
    }
    for i in 0..n {
        a.fixed_view_mut::<3, 3>(off + 3 * i, off + 3 * i)
            .copy_from(&damp(&ne.v[i], lambda));
        b.fixed_rows_mut::<3>(off + 3 * i).copy_from(&ne.g_point[i]);
    }
    for (obs, w) in problem.observations().iter().zip(&ne.w) {
        let (r, c) = (6 * obs.camera, off + 3 * obs.point);
        a.fixed_view_mut::<6, 3>(r, c).copy_from(w);
        a.fixed_view_mut::<3, 6>(c, r).copy_from(&w.transpose());
    }
    let x = a.cholesky().ok_or(Error::SingularSystem)?.solve(&b);
    Ok(LmStep {
        cameras: (0..m).map(|j| x.fixed_rows::<6>(6 * j).into_owned()).collect(),
        points: (0..n).map(|i| x.fixed_rows::<3>(off + 3 * i).into_owned()).collect(),
    })
}

pub fn apply_step(state: &ParamState, step: &LmStep) -> ParamState {
    ParamState {
        cameras: state
            .cameras
            .iter()
            .zip(&step.cameras)
            .map(|(c, d)| c.with_params(&(c.params() + d)))
            .collect(),
        points: state
            .points
            .iter()
            .zip(&step.points)
            .map(|(p, d)| ScenePoint(p.0 + d))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmTermination {
    ErrorBelowThreshold,
    LambdaExceeded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmOutput {
    pub state: ParamState,
    /// Metrics at the initial point.
    pub initial: IterationRecord,
    /// One record per iteration, accepted or not.
    pub trace: Vec<IterationRecord>,
    /// Total squared error after each accepted step, starting with the initial value.
    pub accepted_costs: Vec<f64>,
    pub termination: LmTermination,
}

fn record(
    problem: &Problem,
    state: &ParamState,
    reference: Option<&ParamState>,
    guard: &ProjectionGuard,
    iter: usize,
    start: Instant,
) -> Result<IterationRecord> {
    let mse = reference.map(|r| parameter_mse(state, r)).transpose()?;
    Ok(IterationRecord {
        iter,
        mean_reproj_err: mean_reprojection_error(problem, state, guard)?,
        max_primal_x: 0.0,
        max_primal_y: 0.0,
        camera_mse: mse.map(|m| m.camera),
        point_mse: mse.map(|m| m.point),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        comm_floats: 0,
    })
}

/// Levenberg-Marquardt on the squared reprojection error. Each iteration is
/// one trial step; it is accepted iff the total squared error decreases.
pub fn solve_lm(
    problem: &Problem,
    init: &ParamState,
    opts: &LmOptions,
    guard: &ProjectionGuard,
    reference: Option<&ParamState>,
) -> Result<LmOutput> {
    opts.validate()?;
    problem.check_state(init)?;
    let start = Instant::now();
    let mut state = init.clone();
    let mut cost = total_squared_error(problem, &state, guard)?;
    let mut lambda = opts.lambda_init;
    let initial = record(problem, &state, reference, guard, 0, start)?;
    let mut trace = Vec::new();
    let mut accepted_costs = vec![cost];
    let mut termination = LmTermination::MaxIterations;
    let mut ne = normal_equations(problem, &state, guard)?;

    for iter in 1..=opts.max_iters {
        if cost < opts.error_stop {
            termination = LmTermination::ErrorBelowThreshold;
            break;
        }
        if lambda > opts.lambda_max {
            termination = LmTermination::LambdaExceeded;
            break;
        }
        let trial = solve_step(problem, &ne, lambda, opts.use_schur)
            .ok()
            .map(|step| apply_step(&state, &step))
            .and_then(|s| total_squared_error(problem, &s, guard).ok().map(|c| (s, c)));
        match trial {
            Some((s, c)) if c < cost => {
                state = s;
                cost = c;
                accepted_costs.push(c);
                lambda /= opts.lambda_down;
                ne = normal_equations(problem, &state, guard)?;
            }
            _ => lambda *= opts.lambda_up,
        }
        trace.push(record(problem, &state, reference, guard, iter, start)?);
    }
    if termination == LmTermination::MaxIterations {
        if cost < opts.error_stop {
            termination = LmTermination::ErrorBelowThreshold;
        } else if lambda > opts.lambda_max {
            termination = LmTermination::LambdaExceeded;
        }
    }
    Ok(LmOutput {
        state,
        initial,
        trace,
        accepted_costs,
        termination,
    })
}
