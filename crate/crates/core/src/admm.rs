//! Consensus ADMM bundle adjustment distributing both scene points and
//! camera parameters.
//!
//! Observations are grouped into local blocks. Each block owns a private copy
//! of every point and camera it touches, plus one dual vector per copy. An
//! iteration is
//!
//! 1. local update: each block minimises
//!    `Σ φ_m(z - f(x, y)) + rᵀ(x - x̄) + sᵀ(y - ȳ) + ρ_x/2 ‖x - x̄‖² + ρ_y/2 ‖y - ȳ‖²`
//!    over its copies (Gauss-Newton for squared ℓ2, L-BFGS for Huber);
//! 2. consensus: `x̄_i = mean over copies of (x_i^b + r_i^b / ρ_x)`, likewise
//!    for cameras;
//! 3. dual ascent: `r_i^b += ρ_x (x_i^b - x̄_i)`, likewise for cameras.
//!
//! Phases are separated by barriers. Blocks run on a worker pool during the
//! local and dual phases; each consensus variable is reduced over its copies
//! in a fixed order, so results do not depend on the number of workers.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{project, project_with_jacobians, CameraParams, ImagePoint, ProjectionGuard, ScenePoint};
use crate::local_opt::{gauss_newton, lbfgs, InnerOptions, Status};
use crate::losses::LossKind;
use crate::problem::{mean_reprojection_error, parameter_mse, ParamState, Problem};
use crate::trace::IterationRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub rho_x: f64,
    pub rho_y: f64,
    pub max_iters: usize,
    /// Stop once both max primal residuals fall below this. `None` runs the
    /// full iteration budget.
    pub primal_tol: Option<f64>,
    pub misfit_loss: LossKind,
    pub inner: InnerOptions,
    pub workers: usize,
    pub guard: ProjectionGuard,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho_x: 1.0,
            rho_y: 1.0,
            max_iters: 1600,
            primal_tol: None,
            misfit_loss: LossKind::SquaredL2,
            inner: InnerOptions::default(),
            workers: 1,
            guard: ProjectionGuard::default(),
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_x > 0.0 && self.rho_y > 0.0 && self.rho_x.is_finite() && self.rho_y.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalties must be positive, got rho_x={} rho_y={}",
                self.rho_x, self.rho_y
            )));
        }
        if self.workers < 1 {
            return Err(Error::InvalidParameter("at least one worker is required".into()));
        }
        if let LossKind::Huber { delta } = self.misfit_loss {
            LossKind::huber(delta)?;
        }
        self.inner.validate()
    }
}

/// Maximum number of distinct points and cameras per local block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub points_per_block: usize,
    pub cameras_per_block: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            points_per_block: 1,
            cameras_per_block: 1,
        }
    }
}

impl BlockConfig {
    pub fn new(points_per_block: usize, cameras_per_block: usize) -> Result<Self> {
        if points_per_block < 1 || cameras_per_block < 1 {
            return Err(Error::InvalidParameter("block sizes must be at least 1".into()));
        }
        Ok(Self {
            points_per_block,
            cameras_per_block,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockObservation {
    /// Index of the observation in the problem.
    pub index: usize,
    pub point_slot: usize,
    pub camera_slot: usize,
    pub z: ImagePoint,
}

/// Static structure of a local block: which variables it holds copies of and
/// which observations it fits.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    pub point_ids: Vec<usize>,
    pub camera_ids: Vec<usize>,
    pub observations: Vec<BlockObservation>,
}

impl LocalBlock {
    pub fn dim(&self) -> usize {
        3 * self.point_ids.len() + 6 * self.camera_ids.len()
    }

    /// Processor that hosts this block: its lowest-indexed camera.
    pub fn host(&self) -> usize {
        self.camera_ids[0]
    }
}

/// Groups observations into blocks of at most `π` points and `κ` cameras.
///
/// Cameras are split into consecutive runs of `κ` indices and points into
/// runs of `π` indices; each non-empty (camera run, point run) cell becomes
/// one block holding all observations in it. Blocks are ordered by camera run,
/// then point run.
pub fn partition(problem: &Problem, cfg: &BlockConfig) -> Vec<LocalBlock> {
    let kappa = cfg.cameras_per_block.max(1);
    let pi = cfg.points_per_block.max(1);
    let mut order: Vec<usize> = (0..problem.num_observations()).collect();
    let obs = problem.observations();
    order.sort_by_key(|&k| {
        let o = &obs[k];
        (o.camera / kappa, o.point / pi, o.camera, o.point)
    });

    let mut blocks: Vec<LocalBlock> = Vec::new();
    let mut current_cell = None;
    for k in order {
        let o = obs[k];
        let cell = (o.camera / kappa, o.point / pi);
        if current_cell != Some(cell) {
            current_cell = Some(cell);
            blocks.push(LocalBlock {
                point_ids: Vec::new(),
                camera_ids: Vec::new(),
                observations: Vec::new(),
            });
        }
        let block = blocks.last_mut().unwrap();
        let camera_slot = slot_of(&mut block.camera_ids, o.camera);
        let point_slot = slot_of(&mut block.point_ids, o.point);
        block.observations.push(BlockObservation {
            index: k,
            point_slot,
            camera_slot,
            z: o.z,
        });
    }
    // canonical slot order: ascending variable index
    for block in &mut blocks {
        let remap_p = sorted_remap(&mut block.point_ids);
        let remap_c = sorted_remap(&mut block.camera_ids);
        for o in &mut block.observations {
            o.point_slot = remap_p[o.point_slot];
            o.camera_slot = remap_c[o.camera_slot];
        }
    }
    blocks
}

fn slot_of(ids: &mut Vec<usize>, id: usize) -> usize {
    match ids.iter().position(|&x| x == id) {
        Some(s) => s,
        None => {
            ids.push(id);
            ids.len() - 1
        }
    }
}

/// Sorts `ids` in place and returns the old-slot → new-slot map.
fn sorted_remap(ids: &mut Vec<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by_key(|&s| ids[s]);
    let mut remap = vec![0; ids.len()];
    for (new, &old) in idx.iter().enumerate() {
        remap[old] = new;
    }
    *ids = idx.iter().map(|&s| ids[s]).collect();
    remap
}

/// Local copies and duals owned by one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    pub x: Vec<Vector3<f64>>,
    pub y: Vec<Vector6<f64>>,
    pub r: Vec<Vector3<f64>>,
    pub s: Vec<Vector6<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub blocks: Vec<BlockState>,
    pub points: Vec<Vector3<f64>>,
    pub cameras: Vec<Vector6<f64>>,
    pub k: usize,
}

impl AdmmState {
    /// Consensus variables as a `ParamState`, using the given focal lengths.
    pub fn consensus(&self, focal: &[f64]) -> ParamState {
        ParamState {
            cameras: self
                .cameras
                .iter()
                .zip(focal)
                .map(|(p, &f)| CameraParams::from_params(p, f))
                .collect(),
            points: self.points.iter().map(|&p| ScenePoint(p)).collect(),
        }
    }
}

/// Block objective before and after a local update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOutcome {
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
    pub status: Status,
}

/// Read-only view of everything a local update needs besides its own state.
#[derive(Debug, Clone, Copy)]
pub struct LocalContext<'a> {
    pub points: &'a [Vector3<f64>],
    pub cameras: &'a [Vector6<f64>],
    pub focal: &'a [f64],
    pub opts: &'a AdmmOptions,
}

struct LocalProblem<'a> {
    block: &'a LocalBlock,
    focal: Vec<f64>,
    center_x: Vec<Vector3<f64>>,
    center_y: Vec<Vector6<f64>>,
    rho_x: f64,
    rho_y: f64,
    guard: ProjectionGuard,
}

impl LocalProblem<'_> {
    fn unpack(&self, w: &DVector<f64>, slot_p: usize, slot_c: usize) -> (ScenePoint, CameraParams) {
        let np = self.block.point_ids.len();
        let x = ScenePoint(w.fixed_rows::<3>(3 * slot_p).into_owned());
        let y = CameraParams::from_params(&w.fixed_rows::<6>(3 * np + 6 * slot_c).into_owned(), self.focal[slot_c]);
        (x, y)
    }

    fn prox_value(&self, w: &DVector<f64>) -> f64 {
        let np = self.block.point_ids.len();
        let mut v = 0.0;
        for (p, c) in self.center_x.iter().enumerate() {
            v += 0.5 * self.rho_x * (w.fixed_rows::<3>(3 * p) - c).norm_squared();
        }
        for (q, c) in self.center_y.iter().enumerate() {
            v += 0.5 * self.rho_y * (w.fixed_rows::<6>(3 * np + 6 * q) - c).norm_squared();
        }
        v
    }

    /// Misfit residuals `f(x, y) - z` stacked with the proximal rows.
    fn residuals(&self, w: &DVector<f64>) -> Option<DVector<f64>> {
        let nobs = self.block.observations.len();
        let np = self.block.point_ids.len();
        let mut out = DVector::zeros(2 * nobs + w.len());
        for (k, o) in self.block.observations.iter().enumerate() {
            let (x, y) = self.unpack(w, o.point_slot, o.camera_slot);
            let z = project(&x, &y, &self.guard).ok()?;
            out[2 * k] = z.u - o.z.u;
            out[2 * k + 1] = z.v - o.z.v;
        }
        let (sx, sy) = ((0.5 * self.rho_x).sqrt(), (0.5 * self.rho_y).sqrt());
        let base = 2 * nobs;
        for (p, c) in self.center_x.iter().enumerate() {
            let d = w.fixed_rows::<3>(3 * p) - c;
            out.fixed_rows_mut::<3>(base + 3 * p).copy_from(&(d * sx));
        }
        for (q, c) in self.center_y.iter().enumerate() {
            let d = w.fixed_rows::<6>(3 * np + 6 * q) - c;
            out.fixed_rows_mut::<6>(base + 3 * np + 6 * q).copy_from(&(d * sy));
        }
        Some(out)
    }

    fn jacobian(&self, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        let nobs = self.block.observations.len();
        let np = self.block.point_ids.len();
        let dim = w.len();
        let mut jac = DMatrix::zeros(2 * nobs + dim, dim);
        for (k, o) in self.block.observations.iter().enumerate() {
            let (x, y) = self.unpack(w, o.point_slot, o.camera_slot);
            let (_, jx, jy) = project_with_jacobians(&x, &y, &self.guard).ok()?;
            jac.fixed_view_mut::<2, 3>(2 * k, 3 * o.point_slot).copy_from(&jx);
            jac.fixed_view_mut::<2, 6>(2 * k, 3 * np + 6 * o.camera_slot)
                .copy_from(&jy);
        }
        let (sx, sy) = ((0.5 * self.rho_x).sqrt(), (0.5 * self.rho_y).sqrt());
        for d in 0..dim {
            jac[(2 * nobs + d, d)] = if d < 3 * np { sx } else { sy };
        }
        Some(jac)
    }

    fn robust_value(&self, loss: LossKind, w: &DVector<f64>) -> Option<f64> {
        let mut v = self.prox_value(w);
        for o in &self.block.observations {
            let (x, y) = self.unpack(w, o.point_slot, o.camera_slot);
            let z = project(&x, &y, &self.guard).ok()?;
            v += loss.value(&(o.z.as_vector() - z.as_vector()));
        }
        Some(v)
    }

    fn robust_gradient(&self, loss: LossKind, w: &DVector<f64>) -> DVector<f64> {
        let np = self.block.point_ids.len();
        let mut g = DVector::zeros(w.len());
        for o in &self.block.observations {
            let (x, y) = self.unpack(w, o.point_slot, o.camera_slot);
            let Ok((z, jx, jy)) = project_with_jacobians(&x, &y, &self.guard) else {
                continue;
            };
            let e: Vector2<f64> = o.z.as_vector() - z.as_vector();
            let dl = loss.gradient(&e);
            // d/dw φ(z - f(w)) = -Jᵀ ∇φ
            let mut gp = g.fixed_rows_mut::<3>(3 * o.point_slot);
            gp -= jx.transpose() * dl;
            let mut gc = g.fixed_rows_mut::<6>(3 * np + 6 * o.camera_slot);
            gc -= jy.transpose() * dl;
        }
        for (p, c) in self.center_x.iter().enumerate() {
            let mut gp = g.fixed_rows_mut::<3>(3 * p);
            gp += (w.fixed_rows::<3>(3 * p) - c) * self.rho_x;
        }
        for (q, c) in self.center_y.iter().enumerate() {
            let off = 3 * np + 6 * q;
            let mut gc = g.fixed_rows_mut::<6>(off);
            gc += (w.fixed_rows::<6>(off) - c) * self.rho_y;
        }
        g
    }

    /// Block objective up to the constant dropped when completing the square.
    fn objective(&self, loss: LossKind, w: &DVector<f64>) -> Option<f64> {
        match loss {
            LossKind::SquaredL2 => self.residuals(w).map(|r| r.norm_squared()),
            LossKind::Huber { .. } => self.robust_value(loss, w),
        }
    }
}

fn pack(state: &BlockState) -> DVector<f64> {
    let mut w = DVector::zeros(3 * state.x.len() + 6 * state.y.len());
    for (p, x) in state.x.iter().enumerate() {
        w.fixed_rows_mut::<3>(3 * p).copy_from(x);
    }
    let np = state.x.len();
    for (q, y) in state.y.iter().enumerate() {
        w.fixed_rows_mut::<6>(3 * np + 6 * q).copy_from(y);
    }
    w
}

fn unpack_into(w: &DVector<f64>, state: &mut BlockState) {
    let np = state.x.len();
    for (p, x) in state.x.iter_mut().enumerate() {
        *x = w.fixed_rows::<3>(3 * p).into_owned();
    }
    for (q, y) in state.y.iter_mut().enumerate() {
        *y = w.fixed_rows::<6>(3 * np + 6 * q).into_owned();
    }
}

/// Approximately minimises the block's augmented objective over its local
/// copies, warm-started from the current copies. The dual terms are folded
/// into the proximal centres `x̄ - r/ρ`.
pub fn local_update(block: &LocalBlock, state: &mut BlockState, ctx: &LocalContext<'_>) -> Result<LocalOutcome> {
    let opts = ctx.opts;
    let lp = LocalProblem {
        block,
        focal: block.camera_ids.iter().map(|&j| ctx.focal[j]).collect(),
        center_x: block
            .point_ids
            .iter()
            .zip(&state.r)
            .map(|(&i, r)| ctx.points[i] - r / opts.rho_x)
            .collect(),
        center_y: block
            .camera_ids
            .iter()
            .zip(&state.s)
            .map(|(&j, s)| ctx.cameras[j] - s / opts.rho_y)
            .collect(),
        rho_x: opts.rho_x,
        rho_y: opts.rho_y,
        guard: opts.guard,
    };
    let w0 = pack(state);
    let loss = opts.misfit_loss;
    let before = lp.objective(loss, &w0).ok_or_else(|| {
        block
            .observations
            .iter()
            .find_map(|o| {
                let (x, y) = lp.unpack(&w0, o.point_slot, o.camera_slot);
                project(&x, &y, &opts.guard).err()
            })
            .unwrap_or_else(|| Error::depth(f64::NAN))
    })?;
    let sol = match loss {
        LossKind::SquaredL2 => gauss_newton(|w| lp.residuals(w), |w| lp.jacobian(w), &w0, &opts.inner)?,
        LossKind::Huber { .. } => lbfgs(
            |w| lp.robust_value(loss, w),
            |w| lp.robust_gradient(loss, w),
            &w0,
            &opts.inner,
        )?,
    };
    unpack_into(&sol.x, state);
    Ok(LocalOutcome {
        objective_before: before,
        objective_after: sol.cost,
        iterations: sol.iterations,
        status: sol.status,
    })
}

/// Operation counts for one ADMM iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub local_solves: u64,
    pub consensus_terms: u64,
    pub dual_updates: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.local_solves + self.consensus_terms + self.dual_updates
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub max_primal_x: f64,
    pub max_primal_y: f64,
    pub ops: OpCounts,
}

/// Solver bound to one problem and block layout.
pub struct AdmmSolver<'a> {
    problem: &'a Problem,
    blocks: Vec<LocalBlock>,
    /// For each point, the `(block, slot)` of every copy, in block order.
    point_copies: Vec<Vec<(usize, usize)>>,
    camera_copies: Vec<Vec<(usize, usize)>>,
    focal: Vec<f64>,
    opts: AdmmOptions,
    pool: rayon::ThreadPool,
}

impl<'a> AdmmSolver<'a> {
    pub fn new(problem: &'a Problem, init: &ParamState, opts: AdmmOptions, block_cfg: &BlockConfig) -> Result<Self> {
        opts.validate()?;
        problem.check_state(init)?;
        let blocks = partition(problem, block_cfg);
        let mut point_copies = vec![Vec::new(); problem.num_points()];
        let mut camera_copies = vec![Vec::new(); problem.num_cameras()];
        for (b, block) in blocks.iter().enumerate() {
            for (slot, &i) in block.point_ids.iter().enumerate() {
                point_copies[i].push((b, slot));
            }
            for (slot, &j) in block.camera_ids.iter().enumerate() {
                camera_copies[j].push((b, slot));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
        Ok(Self {
            problem,
            blocks,
            point_copies,
            camera_copies,
            focal: init.cameras.iter().map(|c| c.f).collect(),
            opts,
            pool,
        })
    }

    pub fn blocks(&self) -> &[LocalBlock] {
        &self.blocks
    }

    pub fn focal(&self) -> &[f64] {
        &self.focal
    }

    pub fn options(&self) -> &AdmmOptions {
        &self.opts
    }

    /// Consensus at `init`, every local copy equal to consensus, duals zero.
    pub fn initial_state(&self, init: &ParamState) -> AdmmState {
        let points: Vec<Vector3<f64>> = init.points.iter().map(|p| p.0).collect();
        let cameras: Vec<Vector6<f64>> = init.cameras.iter().map(|c| c.params()).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockState {
                x: b.point_ids.iter().map(|&i| points[i]).collect(),
                y: b.camera_ids.iter().map(|&j| cameras[j]).collect(),
                r: vec![Vector3::zeros(); b.point_ids.len()],
                s: vec![Vector6::zeros(); b.camera_ids.len()],
            })
            .collect();
        AdmmState {
            blocks,
            points,
            cameras,
            k: 0,
        }
    }

    /// Runs the local phase on every block in parallel.
    pub fn local_phase(&self, state: &mut AdmmState) -> Result<Vec<LocalOutcome>> {
        let ctx = LocalContext {
            points: &state.points,
            cameras: &state.cameras,
            focal: &self.focal,
            opts: &self.opts,
        };
        let blocks = &self.blocks;
        self.pool.install(|| {
            state
                .blocks
                .par_iter_mut()
                .enumerate()
                .map(|(b, bs)| {
                    local_update(&blocks[b], bs, &ctx).map_err(|e| Error::Block {
                        block: b,
                        source: Box::new(e),
                    })
                })
                .collect()
        })
    }

    pub fn consensus_update(&self, state: &mut AdmmState) {
        consensus_update(state, &self.point_copies, &self.camera_copies, &self.opts, &self.pool);
    }

    pub fn dual_update(&self, state: &mut AdmmState) -> StepStats {
        dual_update(state, &self.blocks, &self.opts, &self.pool)
    }

    /// One full iteration: local phase, consensus, dual ascent.
    pub fn step(&self, state: &mut AdmmState) -> Result<StepStats> {
        self.local_phase(state)?;
        self.consensus_update(state);
        let mut stats = self.dual_update(state);
        stats.ops.local_solves = self.blocks.len() as u64;
        stats.ops.consensus_terms = self
            .point_copies
            .iter()
            .chain(&self.camera_copies)
            .map(|c| c.len() as u64)
            .sum();
        state.k += 1;
        Ok(stats)
    }

    pub fn consensus(&self, state: &AdmmState) -> ParamState {
        state.consensus(&self.focal)
    }

    /// Largest per-variable dual sum, relative to `1 + max ‖dual‖`.
    pub fn dual_sum_violation(&self, state: &AdmmState) -> f64 {
        let mut worst: f64 = 0.0;
        for copies in &self.point_copies {
            let mut sum = Vector3::zeros();
            let mut largest: f64 = 0.0;
            for &(b, s) in copies {
                let r = state.blocks[b].r[s];
                sum += r;
                largest = largest.max(r.norm());
            }
            worst = worst.max(sum.norm() / (1.0 + largest));
        }
        for copies in &self.camera_copies {
            let mut sum = Vector6::zeros();
            let mut largest: f64 = 0.0;
            for &(b, s) in copies {
                let r = state.blocks[b].s[s];
                sum += r;
                largest = largest.max(r.norm());
            }
            worst = worst.max(sum.norm() / (1.0 + largest));
        }
        worst
    }

    pub fn communication_floats(&self) -> u64 {
        communication_cost_for_blocks(&self.blocks, self.problem.num_points(), self.problem.num_cameras())
    }
}

/// Consensus step: each variable becomes the mean of `copy + dual/ρ` over its
/// copies, summed in block order.
pub fn consensus_update(
    state: &mut AdmmState,
    point_copies: &[Vec<(usize, usize)>],
    camera_copies: &[Vec<(usize, usize)>],
    opts: &AdmmOptions,
    pool: &rayon::ThreadPool,
) {
    let blocks = &state.blocks;
    let (rho_x, rho_y) = (opts.rho_x, opts.rho_y);
    let mut points = Vec::with_capacity(point_copies.len());
    let mut cameras = Vec::with_capacity(camera_copies.len());
    pool.install(|| {
        point_copies
            .par_iter()
            .map(|copies| {
                let mut acc = Vector3::zeros();
                for &(b, s) in copies {
                    acc += blocks[b].x[s] + blocks[b].r[s] / rho_x;
                }
                acc / copies.len() as f64
            })
            .collect_into_vec(&mut points);
        camera_copies
            .par_iter()
            .map(|copies| {
                let mut acc = Vector6::zeros();
                for &(b, s) in copies {
                    acc += blocks[b].y[s] + blocks[b].s[s] / rho_y;
                }
                acc / copies.len() as f64
            })
            .collect_into_vec(&mut cameras);
    });
    state.points = points;
    state.cameras = cameras;
}

/// Dual ascent `r += ρ_x (x^b - x̄)`, `s += ρ_y (y^b - ȳ)`. Returns the max
/// primal residuals measured against the new consensus.
pub fn dual_update(
    state: &mut AdmmState,
    blocks: &[LocalBlock],
    opts: &AdmmOptions,
    pool: &rayon::ThreadPool,
) -> StepStats {
    let (rho_x, rho_y) = (opts.rho_x, opts.rho_y);
    let points = &state.points;
    let cameras = &state.cameras;
    let per_block: Vec<(f64, f64, u64)> = pool.install(|| {
        state
            .blocks
            .par_iter_mut()
            .zip(blocks.par_iter())
            .map(|(bs, lb)| {
                let mut px: f64 = 0.0;
                let mut py: f64 = 0.0;
                for (slot, &i) in lb.point_ids.iter().enumerate() {
                    let d = bs.x[slot] - points[i];
                    bs.r[slot] += d * rho_x;
                    px = px.max(d.norm());
                }
                for (slot, &j) in lb.camera_ids.iter().enumerate() {
                    let d = bs.y[slot] - cameras[j];
                    bs.s[slot] += d * rho_y;
                    py = py.max(d.norm());
                }
                (px, py, (lb.point_ids.len() + lb.camera_ids.len()) as u64)
            })
            .collect()
    });
    let mut stats = StepStats {
        max_primal_x: 0.0,
        max_primal_y: 0.0,
        ops: OpCounts::default(),
    };
    for (px, py, n) in per_block {
        stats.max_primal_x = stats.max_primal_x.max(px);
        stats.max_primal_y = stats.max_primal_y.max(py);
        stats.ops.dual_updates += n;
    }
    stats
}

/// Floats exchanged per iteration when every block lives on the processor of
/// its lowest-indexed camera: for each consensus variable held on `h`
/// distinct processors, each one sends its estimate to the other `h - 1`.
/// Points cost 3 floats per message, cameras 6.
pub fn communication_cost(problem: &Problem, block_cfg: &BlockConfig) -> u64 {
    communication_cost_for_blocks(
        &partition(problem, block_cfg),
        problem.num_points(),
        problem.num_cameras(),
    )
}

fn communication_cost_for_blocks(blocks: &[LocalBlock], num_points: usize, num_cameras: usize) -> u64 {
    let mut point_hosts = vec![BTreeSet::new(); num_points];
    let mut camera_hosts = vec![BTreeSet::new(); num_cameras];
    for b in blocks {
        for &i in &b.point_ids {
            point_hosts[i].insert(b.host());
        }
        for &j in &b.camera_ids {
            camera_hosts[j].insert(b.host());
        }
    }
    let cost = |hosts: &[BTreeSet<usize>], dim: u64| -> u64 {
        hosts
            .iter()
            .map(|h| {
                let h = h.len() as u64;
                dim * h * h.saturating_sub(1)
            })
            .sum()
    };
    cost(&point_hosts, 3) + cost(&camera_hosts, 6)
}

#[derive(Debug, Clone)]
pub struct AdmmOutput {
    pub state: ParamState,
    /// Metrics at the initial point, before any iteration.
    pub initial: IterationRecord,
    /// One record per completed iteration.
    pub trace: Vec<IterationRecord>,
    /// `dual_sum_violation` after each iteration.
    pub dual_sums: Vec<f64>,
    pub ops_per_iter: OpCounts,
    pub final_state: AdmmState,
    pub converged: bool,
}

fn consensus_record(
    problem: &Problem,
    consensus: &ParamState,
    reference: Option<&ParamState>,
    guard: &ProjectionGuard,
) -> Result<IterationRecord> {
    let mse = reference.map(|r| parameter_mse(consensus, r)).transpose()?;
    // an infeasible consensus is reported as NaN rather than aborting the run
    let err = mean_reprojection_error(problem, consensus, guard).unwrap_or(f64::NAN);
    Ok(IterationRecord {
        iter: 0,
        mean_reproj_err: err,
        max_primal_x: 0.0,
        max_primal_y: 0.0,
        camera_mse: mse.map(|m| m.camera),
        point_mse: mse.map(|m| m.point),
        wall_ms: 0.0,
        comm_floats: 0,
    })
}

/// Iterates local update, consensus and dual ascent until `max_iters` or
/// `primal_tol`, returning the consensus estimate and a per-iteration trace.
pub fn run_admm(
    problem: &Problem,
    init: &ParamState,
    opts: &AdmmOptions,
    block_cfg: &BlockConfig,
    reference: Option<&ParamState>,
) -> Result<AdmmOutput> {
    let solver = AdmmSolver::new(problem, init, *opts, block_cfg)?;
    let mut state = solver.initial_state(init);
    let guard = opts.guard;
    let initial = consensus_record(problem, init, reference, &guard)?;
    let comm = solver.communication_floats();
    let start = Instant::now();
    let mut trace = Vec::with_capacity(opts.max_iters);
    let mut dual_sums = Vec::with_capacity(opts.max_iters);
    let mut ops = OpCounts::default();
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let stats = solver.step(&mut state)?;
        ops = stats.ops;
        dual_sums.push(solver.dual_sum_violation(&state));
        let consensus = solver.consensus(&state);
        let mut rec = consensus_record(problem, &consensus, reference, &guard)?;
        rec.iter = state.k;
        rec.max_primal_x = stats.max_primal_x;
        rec.max_primal_y = stats.max_primal_y;
        rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        rec.comm_floats = comm;
        trace.push(rec);
        if let Some(tol) = opts.primal_tol {
            if stats.max_primal_x < tol && stats.max_primal_y < tol {
                converged = true;
                break;
            }
        }
    }
    Ok(AdmmOutput {
        state: solver.consensus(&state),
        initial,
        trace,
        dual_sums,
        ops_per_iter: ops,
        final_state: state,
        converged,
    })
}
