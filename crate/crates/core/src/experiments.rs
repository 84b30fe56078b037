//! Experiment protocols shared by the command-line tool and the test suite:
//! LM versus ADMM on one problem, noise and penalty sweeps over seeds, and
//! runtime scaling with problem size and worker count.
//!
//! Seed `s` generates the scene with `rng_seed = s` and the initial
//! perturbation with `rng_seed = s + 1`.

use std::time::Instant;

use crate::admm::{run_admm, AdmmOptions, AdmmOutput, BlockConfig, OpCounts};
use crate::error::{Error, Result};
use crate::geometry::ProjectionGuard;
use crate::lm::{solve_lm, LmOptions, LmOutput};
use crate::losses::LossKind;
use crate::problem::{parameter_mse_aligned, ParamMse, ParamState, Problem};
use crate::scene_gen::{generate_scene, perturb, InitPerturbation, SceneConfig};
use crate::trace::IterationRecord;

/// A generated problem with its ground truth and perturbed starting point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    pub truth: ParamState,
    pub init: ParamState,
}

pub fn instance(scene: &SceneConfig, sigma_cam: f64, sigma_point: f64, seed: u64) -> Result<Instance> {
    let (problem, truth) = generate_scene(&SceneConfig {
        rng_seed: seed,
        ..*scene
    })?;
    let init = perturb(
        &truth,
        &InitPerturbation {
            sigma_cam,
            sigma_point,
            rng_seed: seed.wrapping_add(1),
        },
    )?;
    Ok(Instance { problem, truth, init })
}

/// Scene with `observations / window` points seen by `window` of `cameras`
/// cameras each.
pub fn scene_with_observations(observations: usize, window: usize, cameras: usize) -> Result<SceneConfig> {
    if window == 0 || !observations.is_multiple_of(window) {
        return Err(Error::InvalidParameter(format!(
            "observation count {observations} is not a multiple of the window {window}"
        )));
    }
    let n_points = observations / window;
    if n_points < cameras {
        return Err(Error::InvalidParameter(format!(
            "{n_points} points cannot cover {cameras} cameras"
        )));
    }
    Ok(SceneConfig {
        n_cameras: cameras,
        n_points,
        visibility_window: window,
        ..SceneConfig::default()
    })
}

/// First iteration whose primal residuals are both below `tol`.
pub fn iterations_to_tolerance(trace: &[IterationRecord], tol: f64) -> Option<usize> {
    trace
        .iter()
        .find(|r| r.max_primal_x < tol && r.max_primal_y < tol)
        .map(|r| r.iter)
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub lm: LmOutput,
    pub admm: AdmmOutput,
}

pub fn compare(
    problem: &Problem,
    init: &ParamState,
    truth: Option<&ParamState>,
    lm: &LmOptions,
    admm: &AdmmOptions,
    blocks: &BlockConfig,
) -> Result<Comparison> {
    Ok(Comparison {
        lm: solve_lm(problem, init, lm, &admm.guard, truth)?,
        admm: run_admm(problem, init, admm, blocks, truth)?,
    })
}

/// Start and end of one ADMM run on a generated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub initial: IterationRecord,
    pub last: IterationRecord,
    pub iterations: usize,
    /// Largest `dual_sum_violation` over the run.
    pub max_dual_sum: f64,
    /// Parameter MSE after similarity alignment to the ground truth.
    pub aligned_initial_mse: ParamMse,
    pub aligned_final_mse: ParamMse,
}

impl RunSummary {
    pub fn final_err(&self) -> f64 {
        self.last.mean_reproj_err
    }
}

/// Runs ADMM on `inst` with the ground truth as MSE reference.
pub fn summarize_run(inst: &Instance, opts: &AdmmOptions, blocks: &BlockConfig) -> Result<(AdmmOutput, RunSummary)> {
    let out = run_admm(&inst.problem, &inst.init, opts, blocks, Some(&inst.truth))?;
    let summary = RunSummary {
        initial: out.initial,
        last: out.trace.last().copied().unwrap_or(out.initial),
        iterations: out.trace.len(),
        max_dual_sum: out.dual_sums.iter().copied().fold(0.0, f64::max),
        aligned_initial_mse: parameter_mse_aligned(&inst.init, &inst.truth)?,
        aligned_final_mse: parameter_mse_aligned(&out.state, &inst.truth)?,
    };
    Ok((out, summary))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRow {
    pub sigma_point: f64,
    pub seed: u64,
    pub l2: RunSummary,
    pub huber: RunSummary,
}

impl NoiseRow {
    pub fn huber_wins(&self) -> bool {
        self.huber.final_err() <= self.l2.final_err()
    }
}

/// Final consensus error of squared-ℓ2 and Huber ADMM from the same start,
/// for every `(σ_point, seed)` pair. `base` supplies everything but the loss.
pub fn noise_sweep(
    scene: &SceneConfig,
    sigma_cam: f64,
    sigma_points: &[f64],
    seeds: &[u64],
    base: &AdmmOptions,
    blocks: &BlockConfig,
    delta: f64,
) -> Result<Vec<NoiseRow>> {
    let huber = LossKind::huber(delta)?;
    let mut rows = Vec::new();
    for &sigma_point in sigma_points {
        for &seed in seeds {
            let inst = instance(scene, sigma_cam, sigma_point, seed)?;
            let run = |loss| -> Result<RunSummary> {
                let opts = AdmmOptions {
                    misfit_loss: loss,
                    ..*base
                };
                Ok(summarize_run(&inst, &opts, blocks)?.1)
            };
            rows.push(NoiseRow {
                sigma_point,
                seed,
                l2: run(LossKind::SquaredL2)?,
                huber: run(huber)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoRow {
    pub rho: f64,
    pub seed: u64,
    pub iters_to_tol: Option<usize>,
    pub run: RunSummary,
}

/// Iterations to reach `tol` with `ρ_x = ρ_y = ρ`, for every `(ρ, seed)`.
pub fn rho_sweep(
    scene: &SceneConfig,
    pert: (f64, f64),
    rhos: &[f64],
    seeds: &[u64],
    base: &AdmmOptions,
    blocks: &BlockConfig,
    tol: f64,
) -> Result<Vec<RhoRow>> {
    let mut rows = Vec::new();
    for &rho in rhos {
        for &seed in seeds {
            let inst = instance(scene, pert.0, pert.1, seed)?;
            let opts = AdmmOptions {
                rho_x: rho,
                rho_y: rho,
                primal_tol: Some(tol),
                ..*base
            };
            let (out, run) = summarize_run(&inst, &opts, blocks)?;
            rows.push(RhoRow {
                rho,
                seed,
                iters_to_tol: iterations_to_tolerance(&out.trace, tol),
                run,
            });
        }
    }
    Ok(rows)
}

/// Mean iterations to tolerance per ρ, counting runs that never reach it as
/// `budget + 1`.
pub fn mean_iterations(rows: &[RhoRow], budget: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        let it = r.iters_to_tol.unwrap_or(budget + 1) as f64;
        match out.iter_mut().find(|(rho, _, _)| *rho == r.rho) {
            Some(e) => {
                e.1 += it;
                e.2 += 1;
            }
            None => out.push((r.rho, it, 1)),
        }
    }
    out.into_iter().map(|(rho, s, c)| (rho, s / c as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub observations: usize,
    pub workers: usize,
    pub iters: usize,
    pub total_ms: f64,
    pub ms_per_iter: f64,
    pub ops_per_iter: OpCounts,
    pub comm_floats: u64,
}

/// Times `iters` ADMM iterations for every `(observations, workers)` pair.
/// Each size is a scene from [`scene_with_observations`] perturbed with
/// `σ_cam = 0.01`, `σ_point = 0.1`. Setup (partitioning, pool creation) is
/// excluded from the timing.
pub fn bench(
    sizes: &[usize],
    workers: &[usize],
    window: usize,
    cameras: usize,
    iters: usize,
    seed: u64,
    blocks: &BlockConfig,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &l in sizes {
        let scene = scene_with_observations(l, window, cameras)?;
        let inst = instance(&scene, 0.01, 0.1, seed)?;
        for &w in workers {
            let opts = AdmmOptions {
                max_iters: iters,
                primal_tol: None,
                workers: w,
                guard: ProjectionGuard::default(),
                ..AdmmOptions::default()
            };
            let solver = crate::admm::AdmmSolver::new(&inst.problem, &inst.init, opts, blocks)?;
            let mut state = solver.initial_state(&inst.init);
            let mut ops = OpCounts::default();
            let start = Instant::now();
            for _ in 0..iters {
                ops = solver.step(&mut state)?.ops;
            }
            let total_ms = start.elapsed().as_secs_f64() * 1e3;
            rows.push(BenchRow {
                observations: inst.problem.num_observations(),
                workers: w,
                iters,
                total_ms,
                ms_per_iter: total_ms / iters.max(1) as f64,
                ops_per_iter: ops,
                comm_floats: solver.communication_floats(),
            });
        }
    }
    Ok(rows)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_squared_of_exact_and_noisy_lines() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((linear_r_squared(&x, &[3.0, 5.0, 7.0, 9.0]) - 1.0).abs() < 1e-12);
        let r2 = linear_r_squared(&x, &[1.0, 3.0, 2.0, 4.0]);
        assert!((r2 - 0.64).abs() < 1e-12, "{r2}");
    }

    #[test]
    fn sized_scenes() {
        let cfg = scene_with_observations(300, 5, 20).unwrap();
        let (p, _) = generate_scene(&cfg).unwrap();
        assert_eq!(p.num_observations(), 300);
        assert!(scene_with_observations(301, 5, 20).is_err());
        assert!(scene_with_observations(50, 5, 20).is_err());
    }

    #[test]
    fn mean_iterations_penalises_misses() {
        let inst = instance(&SceneConfig::default(), 0.01, 0.01, 0).unwrap();
        let opts = AdmmOptions {
            max_iters: 1,
            ..Default::default()
        };
        let (_, run) = summarize_run(&inst, &opts, &BlockConfig::default()).unwrap();
        let row = |rho, seed, iters_to_tol| RhoRow {
            rho,
            seed,
            iters_to_tol,
            run,
        };
        let rows = [row(1.0, 0, Some(10)), row(1.0, 1, None), row(10.0, 0, Some(4))];
        assert_eq!(mean_iterations(&rows, 100), vec![(1.0, 55.5), (10.0, 4.0)]);
    }

    #[test]
    fn bench_rows_report_linear_counters() {
        let rows = bench(&[100, 200], &[1, 2], 5, 10, 2, 0, &BlockConfig::default()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert_eq!(r.ops_per_iter.local_solves as usize, r.observations);
        }
    }

    #[test]
    fn instances_are_deterministic_per_seed() {
        let a = instance(&SceneConfig::default(), 0.1, 0.2, 3).unwrap();
        let b = instance(&SceneConfig::default(), 0.1, 0.2, 3).unwrap();
        assert_eq!(a.init, b.init);
        let c = instance(&SceneConfig::default(), 0.1, 0.2, 4).unwrap();
        assert_ne!(a.init, c.init);
    }
}
