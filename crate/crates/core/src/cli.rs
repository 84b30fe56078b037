//! `distba` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 bad input data,
//! 4 solver failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::admm::run_admm;
use crate::bal::{parse_problem, serialize_problem};
use crate::config::{ErrorMetric, LossName, RunConfig, SolverKind};
use crate::error::{Error, Result};
use crate::experiments::{self, compare, mean_iterations, noise_sweep, rho_sweep};
use crate::lm::solve_lm;
use crate::metrics_csv::write_trace_file;
use crate::problem::{mean_reprojection_error, rms_reprojection_error, ParamState, Problem};
use crate::scene_gen::{generate_scene, perturb};
use crate::trace::IterationRecord;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "distba", version, about = "Distributed ADMM bundle adjustment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    L2,
    Huber,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Lm,
    Admm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Mean,
    Rms,
}

/// Flags that override the configuration file.
#[derive(Debug, Args, Default)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Sets both penalties.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    block_points: Option<usize>,
    #[arg(long)]
    block_cameras: Option<usize>,
    /// Iteration budget for ADMM and LM.
    #[arg(long)]
    iters: Option<usize>,
}

impl Overrides {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(r) = self.rho {
            cfg.admm.rho_x = r;
            cfg.admm.rho_y = r;
        }
        if let Some(l) = self.loss {
            cfg.admm.loss = match l {
                LossArg::L2 => LossName::L2,
                LossArg::Huber => LossName::Huber,
            };
        }
        if let Some(d) = self.delta {
            cfg.admm.delta = d;
        }
        if let Some(p) = self.block_points {
            cfg.admm.block_points = p;
        }
        if let Some(c) = self.block_cameras {
            cfg.admm.block_cameras = c;
        }
        if let Some(i) = self.iters {
            cfg.admm.iters = i;
            cfg.lm.max_iters = i;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: a problem file holding the perturbed
    /// initialization and a ground-truth file.
    Generate {
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        focal: Option<f64>,
        #[arg(long)]
        sigma_cam: Option<f64>,
        #[arg(long)]
        sigma_point: Option<f64>,
        #[arg(long, default_value = "problem.txt")]
        out: PathBuf,
        #[arg(long, default_value = "truth.txt")]
        truth: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve a problem file; writes the solution and a per-iteration CSV.
    Solve {
        #[arg(long, default_value = "problem.txt")]
        input: PathBuf,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        /// Ground-truth file for the MSE columns.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        solution: Option<PathBuf>,
        /// Reprojection error shown in the summary line.
        #[arg(long, value_enum)]
        error_metric: Option<MetricArg>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run LM and ADMM on the same problem and write their traces side by side.
    Compare {
        #[arg(long, default_value = "problem.txt")]
        input: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
        #[arg(long, default_value = "compare_summary.csv")]
        summary: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Time ADMM iterations across problem sizes and worker counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "100,300,1000,3000,10000")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,8")]
        worker_counts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 20)]
        cameras: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Iterations to reach a primal tolerance for a range of penalties.
    SweepRho {
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
        rhos: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma_cam: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma_point: f64,
        #[arg(long, default_value = "sweep_rho.csv")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Squared-ℓ2 against Huber misfit across initial point noise levels.
    SweepNoise {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.7,1.2,1.7")]
        sigma_points: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        sigma_cam: f64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value = "sweep_noise.csv")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::DuplicateObservation { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Coverage(_)
        | Error::SizeMismatch(_)
        | Error::Io(_) => EXIT_DATA,
        Error::DepthBelowGuard { .. } | Error::ProjectionFailed(_) | Error::SingularSystem | Error::Block { .. } => {
            EXIT_SOLVER
        }
    }
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("distba: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            cameras,
            points,
            window,
            focal,
            sigma_cam,
            sigma_point,
            out,
            truth,
            overrides,
        } => {
            let mut cfg = overrides.load()?;
            let scene = &mut cfg.scene;
            scene.n_cameras = cameras.unwrap_or(scene.n_cameras);
            scene.n_points = points.unwrap_or(scene.n_points);
            scene.visibility_window = window.unwrap_or(scene.visibility_window);
            scene.focal = focal.unwrap_or(scene.focal);
            cfg.perturbation.sigma_cam = sigma_cam.unwrap_or(cfg.perturbation.sigma_cam);
            cfg.perturbation.sigma_point = sigma_point.unwrap_or(cfg.perturbation.sigma_point);
            cfg.validate()?;
            let (problem, gt) = generate_scene(&cfg.scene)?;
            let init = perturb(&gt, &cfg.perturbation)?;
            serialize_problem(&problem, &init, &out)?;
            serialize_problem(&problem, &gt, &truth)?;
            println!(
                "wrote {} ({} cameras, {} points, {} observations) and {}",
                out.display(),
                problem.num_cameras(),
                problem.num_points(),
                problem.num_observations(),
                truth.display()
            );
            Ok(())
        }
        Command::Solve {
            input,
            solver,
            truth,
            metrics,
            solution,
            error_metric,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let (problem, init) = parse_problem(&input)?;
            let truth = load_truth(truth.as_deref(), &problem)?;
            let solver = match solver {
                Some(SolverArg::Lm) => SolverKind::Lm,
                Some(SolverArg::Admm) => SolverKind::Admm,
                None => cfg.solver,
            };
            let opts = cfg.admm.options(cfg.workers)?;
            let (state, initial, trace) = match solver {
                SolverKind::Lm => {
                    let out = solve_lm(&problem, &init, &cfg.lm, &opts.guard, truth.as_ref())?;
                    (out.state, out.initial, out.trace)
                }
                SolverKind::Admm => {
                    let out = run_admm(&problem, &init, &opts, &cfg.admm.block_config()?, truth.as_ref())?;
                    (out.state, out.initial, out.trace)
                }
            };
            let metrics = metrics.or(cfg.output.metrics).unwrap_or_else(|| "metrics.csv".into());
            let solution = solution
                .or(cfg.output.solution)
                .unwrap_or_else(|| "solution.txt".into());
            write_trace_file(&metrics, &trace)?;
            serialize_problem(&problem, &state, &solution)?;
            let metric = match error_metric {
                Some(MetricArg::Mean) => ErrorMetric::Mean,
                Some(MetricArg::Rms) => ErrorMetric::Rms,
                None => cfg.output.error_metric,
            };
            let (name, before, after) = match metric {
                ErrorMetric::Mean => {
                    let last = trace.last().copied().unwrap_or(initial);
                    ("mean", initial.mean_reproj_err, last.mean_reproj_err)
                }
                ErrorMetric::Rms => {
                    let guard = opts.guard;
                    let rms = |s: &ParamState| rms_reprojection_error(&problem, s, &guard).unwrap_or(f64::NAN);
                    ("rms", rms(&init), rms(&state))
                }
            };
            println!(
                "{} iterations: {name} reprojection error {before:.6e} -> {after:.6e}",
                trace.len()
            );
            Ok(())
        }
        Command::Compare {
            input,
            truth,
            out,
            summary,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let (problem, init) = parse_problem(&input)?;
            let truth = load_truth(truth.as_deref(), &problem)?;
            let opts = cfg.admm.options(cfg.workers)?;
            let cmp = compare(
                &problem,
                &init,
                truth.as_ref(),
                &cfg.lm,
                &opts,
                &cfg.admm.block_config()?,
            )?;
            write_side_by_side(&out, &cmp.lm.initial, &cmp.lm.trace, &cmp.admm.trace)?;
            let lm_final = mean_reprojection_error(&problem, &cmp.lm.state, &opts.guard)?;
            let admm_final = cmp
                .admm
                .trace
                .last()
                .map_or(cmp.admm.initial.mean_reproj_err, |r| r.mean_reproj_err);
            let header = "lm_final_mean_reproj_err,admm_final_mean_reproj_err,lm_iters,admm_iters";
            let row = format!(
                "{lm_final},{admm_final},{},{}",
                cmp.lm.trace.len(),
                cmp.admm.trace.len()
            );
            write_lines(&summary, &[header.to_string(), row.clone()])?;
            println!("{header}\n{row}");
            Ok(())
        }
        Command::Bench {
            sizes,
            worker_counts,
            window,
            cameras,
            out,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let iters = overrides.iters.unwrap_or(20);
            let seed = cfg.seed.unwrap_or(0);
            let rows = experiments::bench(
                &sizes,
                &worker_counts,
                window,
                cameras,
                iters,
                seed,
                &cfg.admm.block_config()?,
            )?;
            let mut lines =
                vec!["observations,workers,iters,total_ms,ms_per_iter,ops_per_iter,comm_floats".to_string()];
            for r in &rows {
                lines.push(format!(
                    "{},{},{},{},{},{},{}",
                    r.observations,
                    r.workers,
                    r.iters,
                    r.total_ms,
                    r.ms_per_iter,
                    r.ops_per_iter.total(),
                    r.comm_floats
                ));
            }
            write_lines(&out, &lines)?;
            for line in &lines {
                println!("{line}");
            }
            Ok(())
        }
        Command::SweepRho {
            rhos,
            seeds,
            tol,
            sigma_cam,
            sigma_point,
            out,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let opts = cfg.admm.options(cfg.workers)?;
            let seeds = seed_list(cfg.seed, seeds);
            let rows = rho_sweep(
                &cfg.scene,
                (sigma_cam, sigma_point),
                &rhos,
                &seeds,
                &opts,
                &cfg.admm.block_config()?,
                tol,
            )?;
            let mut lines = vec!["rho,seed,iters_to_tol,final_mean_reproj_err".to_string()];
            for r in &rows {
                let it = r.iters_to_tol.map(|i| i.to_string()).unwrap_or_default();
                lines.push(format!("{},{},{},{}", r.rho, r.seed, it, r.run.final_err()));
            }
            write_lines(&out, &lines)?;
            for (rho, mean) in mean_iterations(&rows, opts.max_iters) {
                println!("rho={rho} mean iterations to {tol:e}: {mean:.1}");
            }
            Ok(())
        }
        Command::SweepNoise {
            sigma_points,
            sigma_cam,
            seeds,
            out,
            overrides,
        } => {
            let cfg = overrides.load()?;
            let opts = cfg.admm.options(cfg.workers)?;
            let seeds = seed_list(cfg.seed, seeds);
            let rows = noise_sweep(
                &cfg.scene,
                sigma_cam,
                &sigma_points,
                &seeds,
                &opts,
                &cfg.admm.block_config()?,
                cfg.admm.delta,
            )?;
            let mut lines =
                vec!["sigma_point,seed,l2_final_mean_reproj_err,huber_final_mean_reproj_err,huber_wins".to_string()];
            for r in &rows {
                lines.push(format!(
                    "{},{},{},{},{}",
                    r.sigma_point,
                    r.seed,
                    r.l2.final_err(),
                    r.huber.final_err(),
                    r.huber_wins() as u8
                ));
            }
            write_lines(&out, &lines)?;
            for &s in &sigma_points {
                let group: Vec<_> = rows.iter().filter(|r| r.sigma_point == s).collect();
                let wins = group.iter().filter(|r| r.huber_wins()).count();
                println!("sigma_point={s}: huber <= l2 in {wins}/{}", group.len());
            }
            Ok(())
        }
    }
}

fn seed_list(base: Option<u64>, count: u64) -> Vec<u64> {
    let base = base.unwrap_or(0);
    (0..count).map(|k| base + k).collect()
}

fn load_truth(path: Option<&Path>, problem: &Problem) -> Result<Option<ParamState>> {
    let Some(path) = path else { return Ok(None) };
    let (p, state) = parse_problem(path)?;
    if p.num_cameras() != problem.num_cameras() || p.num_points() != problem.num_points() {
        return Err(Error::Validation(format!(
            "ground truth {} does not match the problem dimensions",
            path.display()
        )));
    }
    Ok(Some(state))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

fn write_side_by_side(
    path: &Path,
    initial: &IterationRecord,
    lm: &[IterationRecord],
    admm: &[IterationRecord],
) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut lines = vec![
        "iter,lm_mean_reproj_err,admm_mean_reproj_err,lm_camera_mse,admm_camera_mse,lm_point_mse,admm_point_mse"
            .to_string(),
    ];
    let n = lm.len().max(admm.len());
    // a solver that stopped early keeps reporting its final iterate
    let at = |trace: &[IterationRecord], k: usize| *trace.get(k).or(trace.last()).unwrap_or(initial);
    for k in 0..n {
        let (a, b) = (at(lm, k), at(admm, k));
        lines.push(format!(
            "{},{},{},{},{},{},{}",
            k + 1,
            a.mean_reproj_err,
            b.mean_reproj_err,
            opt(a.camera_mse),
            opt(b.camera_mse),
            opt(a.point_mse),
            opt(b.point_mse)
        ));
    }
    write_lines(path, &lines)
}
