//! Python bindings for the `distba` bundle adjustment library.
//!
//! Cameras cross the boundary as 7-element lists
//! `[alpha, beta, gamma, t1, t2, t3, focal]`, points as `[x, y, z]`.

use std::path::PathBuf;

use distba::admm::{self, AdmmOptions, BlockConfig};
use distba::lm::{self, LmOptions, LmTermination};
use distba::problem::{self as prob, ParamMse};
use distba::scene_gen::{self, InitPerturbation, SceneConfig};
use distba::{bal, metrics_csv, CameraParams, Error, LossKind, ProjectionGuard, ScenePoint};
use nalgebra::Vector3;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn loss_from_name(name: &str, delta: f64) -> PyResult<LossKind> {
    match name {
        "l2" => Ok(LossKind::SquaredL2),
        "huber" => LossKind::huber(delta).map_err(py_err),
        other => Err(PyValueError::new_err(format!(
            "unknown loss {other:?}, expected \"l2\" or \"huber\""
        ))),
    }
}

#[pyclass(name = "Problem", module = "pydistba", frozen)]
struct PyProblem {
    inner: prob::Problem,
}

#[pymethods]
impl PyProblem {
    /// `observations` is a list of `(camera, point, u, v)` tuples.
    #[new]
    fn new(num_cameras: usize, num_points: usize, observations: Vec<(usize, usize, f64, f64)>) -> PyResult<Self> {
        let obs = observations
            .into_iter()
            .map(|(camera, point, u, v)| prob::Observation {
                camera,
                point,
                z: distba::ImagePoint::new(u, v),
            })
            .collect();
        let inner = prob::Problem::new(num_cameras, num_points, obs).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_cameras(&self) -> usize {
        self.inner.num_cameras()
    }

    #[getter]
    fn num_points(&self) -> usize {
        self.inner.num_points()
    }

    #[getter]
    fn num_observations(&self) -> usize {
        self.inner.num_observations()
    }

    fn observations(&self) -> Vec<(usize, usize, f64, f64)> {
        self.inner
            .observations()
            .iter()
            .map(|o| (o.camera, o.point, o.z.u, o.z.v))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(cameras={}, points={}, observations={})",
            self.inner.num_cameras(),
            self.inner.num_points(),
            self.inner.num_observations()
        )
    }
}

#[pyclass(name = "State", module = "pydistba", frozen)]
struct PyState {
    inner: prob::ParamState,
}

#[pymethods]
impl PyState {
    #[new]
    fn new(cameras: Vec<[f64; 7]>, points: Vec<[f64; 3]>) -> PyResult<Self> {
        let cameras = cameras
            .into_iter()
            .map(|c| CameraParams::new([c[0], c[1], c[2]], Vector3::new(c[3], c[4], c[5]), c[6]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let points = points.into_iter().map(|p| ScenePoint::new(p[0], p[1], p[2])).collect();
        Ok(Self {
            inner: prob::ParamState { cameras, points },
        })
    }

    #[getter]
    fn cameras(&self) -> Vec<[f64; 7]> {
        self.inner
            .cameras
            .iter()
            .map(|c| [c.alpha, c.beta, c.gamma, c.t.x, c.t.y, c.t.z, c.f])
            .collect()
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.inner.points.iter().map(|p| [p.0.x, p.0.y, p.0.z]).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "State(cameras={}, points={})",
            self.inner.cameras.len(),
            self.inner.points.len()
        )
    }
}

#[pyclass(name = "IterationRecord", module = "pydistba", frozen, get_all)]
struct PyRecord {
    iter: usize,
    mean_reproj_err: f64,
    max_primal_x: f64,
    max_primal_y: f64,
    camera_mse: Option<f64>,
    point_mse: Option<f64>,
    wall_ms: f64,
    comm_floats: u64,
}

impl From<&distba::IterationRecord> for PyRecord {
    fn from(r: &distba::IterationRecord) -> Self {
        Self {
            iter: r.iter,
            mean_reproj_err: r.mean_reproj_err,
            max_primal_x: r.max_primal_x,
            max_primal_y: r.max_primal_y,
            camera_mse: r.camera_mse,
            point_mse: r.point_mse,
            wall_ms: r.wall_ms,
            comm_floats: r.comm_floats,
        }
    }
}

#[pymethods]
impl PyRecord {
    fn __repr__(&self) -> String {
        format!(
            "IterationRecord(iter={}, mean_reproj_err={:e}, max_primal_x={:e}, max_primal_y={:e})",
            self.iter, self.mean_reproj_err, self.max_primal_x, self.max_primal_y
        )
    }
}

/// Output of `solve_lm` or `run_admm`.
#[pyclass(name = "SolveResult", module = "pydistba", frozen)]
struct PySolveResult {
    state: prob::ParamState,
    initial: distba::IterationRecord,
    trace: Vec<distba::IterationRecord>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    termination: String,
}

#[pymethods]
impl PySolveResult {
    #[getter]
    fn state(&self) -> PyState {
        PyState {
            inner: self.state.clone(),
        }
    }

    #[getter]
    fn initial(&self) -> PyRecord {
        (&self.initial).into()
    }

    #[getter]
    fn trace(&self) -> Vec<PyRecord> {
        self.trace.iter().map(PyRecord::from).collect()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Mean reprojection error after the last iteration, or at the start if none ran.
    #[getter]
    fn final_mean_reproj_err(&self) -> f64 {
        self.trace.last().unwrap_or(&self.initial).mean_reproj_err
    }

    /// Writes the per-iteration trace as CSV.
    fn write_metrics(&self, path: PathBuf) -> PyResult<()> {
        metrics_csv::write_trace_file(path, &self.trace).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (n_cameras=5, n_points=10, visibility_window=5, focal=500.0, seed=0))]
fn generate_scene(
    n_cameras: usize,
    n_points: usize,
    visibility_window: usize,
    focal: f64,
    seed: u64,
) -> PyResult<(PyProblem, PyState)> {
    let cfg = SceneConfig {
        n_cameras,
        n_points,
        visibility_window,
        focal,
        rng_seed: seed,
        ..SceneConfig::default()
    };
    let (problem, truth) = scene_gen::generate_scene(&cfg).map_err(py_err)?;
    Ok((PyProblem { inner: problem }, PyState { inner: truth }))
}

/// Gaussian noise on every camera angle and translation and every point coordinate.
#[pyfunction]
#[pyo3(signature = (state, sigma_cam=0.1, sigma_point=0.2, seed=1))]
fn perturb(state: &PyState, sigma_cam: f64, sigma_point: f64, seed: u64) -> PyResult<PyState> {
    let pert = InitPerturbation {
        sigma_cam,
        sigma_point,
        rng_seed: seed,
    };
    let inner = scene_gen::perturb(&state.inner, &pert).map_err(py_err)?;
    Ok(PyState { inner })
}

#[pyfunction]
fn mean_reprojection_error(problem: &PyProblem, state: &PyState) -> PyResult<f64> {
    prob::mean_reprojection_error(&problem.inner, &state.inner, &ProjectionGuard::default()).map_err(py_err)
}

#[pyfunction]
fn total_squared_error(problem: &PyProblem, state: &PyState) -> PyResult<f64> {
    prob::total_squared_error(&problem.inner, &state.inner, &ProjectionGuard::default()).map_err(py_err)
}

/// `(camera_mse, point_mse)` against `reference`; `aligned` first removes the
/// best similarity transform.
#[pyfunction]
#[pyo3(signature = (state, reference, aligned=false))]
fn parameter_mse(state: &PyState, reference: &PyState, aligned: bool) -> PyResult<(f64, f64)> {
    let mse: ParamMse = if aligned {
        prob::parameter_mse_aligned(&state.inner, &reference.inner)
    } else {
        prob::parameter_mse(&state.inner, &reference.inner)
    }
    .map_err(py_err)?;
    Ok((mse.camera, mse.point))
}

#[pyfunction]
#[pyo3(signature = (problem, init, max_iters=100, use_schur=true, truth=None))]
fn solve_lm(
    py: Python<'_>,
    problem: &PyProblem,
    init: &PyState,
    max_iters: usize,
    use_schur: bool,
    truth: Option<&PyState>,
) -> PyResult<PySolveResult> {
    let opts = LmOptions {
        max_iters,
        use_schur,
        ..LmOptions::default()
    };
    let reference = truth.map(|t| &t.inner);
    let out = py
        .detach(|| {
            lm::solve_lm(
                &problem.inner,
                &init.inner,
                &opts,
                &ProjectionGuard::default(),
                reference,
            )
        })
        .map_err(py_err)?;
    let termination = match out.termination {
        LmTermination::ErrorBelowThreshold => "error_below_threshold",
        LmTermination::LambdaExceeded => "lambda_exceeded",
        LmTermination::MaxIterations => "max_iterations",
    };
    Ok(PySolveResult {
        state: out.state,
        initial: out.initial,
        trace: out.trace,
        converged: out.termination != LmTermination::MaxIterations,
        termination: termination.into(),
    })
}

#[pyfunction]
#[pyo3(signature = (
    problem, init, rho=1.0, loss="l2", delta=1.0, block_points=1, block_cameras=1,
    iters=1600, primal_tol=None, workers=1, truth=None,
))]
#[allow(clippy::too_many_arguments)]
fn run_admm(
    py: Python<'_>,
    problem: &PyProblem,
    init: &PyState,
    rho: f64,
    loss: &str,
    delta: f64,
    block_points: usize,
    block_cameras: usize,
    iters: usize,
    primal_tol: Option<f64>,
    workers: usize,
    truth: Option<&PyState>,
) -> PyResult<PySolveResult> {
    let opts = AdmmOptions {
        rho_x: rho,
        rho_y: rho,
        max_iters: iters,
        primal_tol,
        misfit_loss: loss_from_name(loss, delta)?,
        workers,
        ..AdmmOptions::default()
    };
    let blocks = BlockConfig::new(block_points, block_cameras).map_err(py_err)?;
    let reference = truth.map(|t| &t.inner);
    let out = py
        .detach(|| admm::run_admm(&problem.inner, &init.inner, &opts, &blocks, reference))
        .map_err(py_err)?;
    let termination = if out.converged {
        "primal_tolerance"
    } else {
        "max_iterations"
    };
    Ok(PySolveResult {
        state: out.state,
        initial: out.initial,
        trace: out.trace,
        converged: out.converged,
        termination: termination.into(),
    })
}

/// Floats exchanged per ADMM iteration for the given block grid.
#[pyfunction]
#[pyo3(signature = (problem, block_points=1, block_cameras=1))]
fn communication_cost(problem: &PyProblem, block_points: usize, block_cameras: usize) -> PyResult<u64> {
    let blocks = BlockConfig::new(block_points, block_cameras).map_err(py_err)?;
    Ok(admm::communication_cost(&problem.inner, &blocks))
}

#[pyfunction]
fn read_bal(path: PathBuf) -> PyResult<(PyProblem, PyState)> {
    let (problem, state) = bal::parse_problem(path).map_err(py_err)?;
    Ok((PyProblem { inner: problem }, PyState { inner: state }))
}

#[pyfunction]
fn parse_bal(text: &str) -> PyResult<(PyProblem, PyState)> {
    let (problem, state) = bal::parse_str(text).map_err(py_err)?;
    Ok((PyProblem { inner: problem }, PyState { inner: state }))
}

#[pyfunction]
fn write_bal(path: PathBuf, problem: &PyProblem, state: &PyState) -> PyResult<()> {
    bal::serialize_problem(&problem.inner, &state.inner, path).map_err(py_err)
}

#[pyfunction]
fn to_bal_string(problem: &PyProblem, state: &PyState) -> PyResult<String> {
    bal::to_string(&problem.inner, &state.inner).map_err(py_err)
}

#[pymodule]
fn pydistba(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(mean_reprojection_error, m)?)?;
    m.add_function(wrap_pyfunction!(total_squared_error, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_mse, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lm, m)?)?;
    m.add_function(wrap_pyfunction!(run_admm, m)?)?;
    m.add_function(wrap_pyfunction!(communication_cost, m)?)?;
    m.add_function(wrap_pyfunction!(read_bal, m)?)?;
    m.add_function(wrap_pyfunction!(parse_bal, m)?)?;
    m.add_function(wrap_pyfunction!(write_bal, m)?)?;
    m.add_function(wrap_pyfunction!(to_bal_string, m)?)?;
    m.add("METRICS_HEADER", metrics_csv::HEADER)?;
    Ok(())
}
