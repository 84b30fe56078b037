//! Bundle-adjustment problem instances and global error metrics.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    euler_from_rotation, residual, wrap_angle, CameraParams, ImagePoint, ProjectionGuard, ScenePoint,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub z: ImagePoint,
}

/// Index structure of the observations: for each camera the sorted points it
/// images, and for each point the sorted cameras that observe it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    pub by_camera: Vec<Vec<usize>>,
    pub by_point: Vec<Vec<usize>>,
}

impl Visibility {
    pub fn num_cameras(&self) -> usize {
        self.by_camera.len()
    }

    pub fn num_points(&self) -> usize {
        self.by_point.len()
    }

    /// Swaps the roles of cameras and points.
    pub fn transpose(&self) -> Visibility {
        Visibility {
            by_camera: self.by_point.clone(),
            by_point: self.by_camera.clone(),
        }
    }

    /// Number of cameras observing each point.
    pub fn point_degrees(&self) -> Vec<usize> {
        self.by_point.iter().map(Vec::len).collect()
    }
}

/// Builds `S(j)` and its transpose. Every camera must image at least one
/// point and every point must be imaged by at least one camera.
pub fn build_visibility(observations: &[Observation], num_cameras: usize, num_points: usize) -> Result<Visibility> {
    if observations.is_empty() {
        return Err(Error::Coverage("problem has no observations".into()));
    }
    let mut by_camera = vec![Vec::new(); num_cameras];
    let mut by_point = vec![Vec::new(); num_points];
    for obs in observations {
        if obs.camera >= num_cameras {
            return Err(Error::IndexOutOfRange {
                kind: "camera",
                index: obs.camera,
                count: num_cameras,
            });
        }
        if obs.point >= num_points {
            return Err(Error::IndexOutOfRange {
                kind: "point",
                index: obs.point,
                count: num_points,
            });
        }
        by_camera[obs.camera].push(obs.point);
        by_point[obs.point].push(obs.camera);
    }
    for (j, pts) in by_camera.iter_mut().enumerate() {
        pts.sort_unstable();
        if let Some(w) = pts.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateObservation { point: w[0], camera: j });
        }
        if pts.is_empty() {
            return Err(Error::Coverage(format!("camera {j} observes no points")));
        }
    }
    for (i, cams) in by_point.iter_mut().enumerate() {
        cams.sort_unstable();
        if cams.is_empty() {
            return Err(Error::Coverage(format!("point {i} is not observed by any camera")));
        }
    }
    Ok(Visibility { by_camera, by_point })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    num_cameras: usize,
    num_points: usize,
    observations: Vec<Observation>,
    visibility: Visibility,
}

impl Problem {
    pub fn new(num_cameras: usize, num_points: usize, observations: Vec<Observation>) -> Result<Self> {
        for obs in &observations {
            if !(obs.z.u.is_finite() && obs.z.v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite image point for camera {} point {}",
                    obs.camera, obs.point
                )));
            }
        }
        let visibility = build_visibility(&observations, num_cameras, num_points)?;
        Ok(Self {
            num_cameras,
            num_points,
            observations,
            visibility,
        })
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn visibility(&self) -> &Visibility {
        &self.visibility
    }

    pub fn check_state(&self, state: &ParamState) -> Result<()> {
        if state.cameras.len() != self.num_cameras || state.points.len() != self.num_points {
            return Err(Error::SizeMismatch(format!(
                "state has {} cameras and {} points, problem has {} and {}",
                state.cameras.len(),
                state.points.len(),
                self.num_cameras,
                self.num_points
            )));
        }
        Ok(())
    }
}

/// A full assignment of all unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub cameras: Vec<CameraParams>,
    pub points: Vec<ScenePoint>,
}

impl ParamState {
    pub fn num_unknowns(&self) -> usize {
        6 * self.cameras.len() + 3 * self.points.len()
    }
}

fn residuals<'a>(
    problem: &'a Problem,
    state: &'a ParamState,
    guard: &'a ProjectionGuard,
) -> impl Iterator<Item = Result<Vector2<f64>>> + 'a {
    problem.observations.iter().map(move |obs| {
        residual(&obs.z, &state.points[obs.point], &state.cameras[obs.camera], guard)
            .map_err(|e| e.at(obs.point, obs.camera))
    })
}

/// Mean over observations of the Euclidean reprojection error, in pixels.
pub fn mean_reprojection_error(problem: &Problem, state: &ParamState, guard: &ProjectionGuard) -> Result<f64> {
    problem.check_state(state)?;
    let mut sum = 0.0;
    for r in residuals(problem, state, guard) {
        sum += r?.norm();
    }
    Ok(sum / problem.num_observations() as f64)
}

/// Root-mean-square of the per-observation reprojection error norms.
pub fn rms_reprojection_error(problem: &Problem, state: &ParamState, guard: &ProjectionGuard) -> Result<f64> {
    Ok((total_squared_error(problem, state, guard)? / problem.num_observations() as f64).sqrt())
}

/// `Σ ‖z_ij - f(x_i, y_j)‖²`, the least-squares objective.
pub fn total_squared_error(problem: &Problem, state: &ParamState, guard: &ProjectionGuard) -> Result<f64> {
    problem.check_state(state)?;
    let mut sum = 0.0;
    for r in residuals(problem, state, guard) {
        sum += r?.norm_squared();
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamMse {
    pub camera: f64,
    pub point: f64,
}

/// Entry-wise mean squared error against a reference, without gauge
/// alignment. Angle differences are wrapped into `(-π, π]`.
pub fn parameter_mse(state: &ParamState, reference: &ParamState) -> Result<ParamMse> {
    if state.cameras.len() != reference.cameras.len() || state.points.len() != reference.points.len() {
        return Err(Error::SizeMismatch(format!(
            "state ({} cameras, {} points) vs reference ({} cameras, {} points)",
            state.cameras.len(),
            state.points.len(),
            reference.cameras.len(),
            reference.points.len()
        )));
    }
    let mut cam = 0.0;
    for (a, b) in state.cameras.iter().zip(&reference.cameras) {
        let d = a.params() - b.params();
        for k in 0..3 {
            cam += wrap_angle(d[k]).powi(2);
        }
        for k in 3..6 {
            cam += d[k] * d[k];
        }
    }
    let pt: f64 = state
        .points
        .iter()
        .zip(&reference.points)
        .map(|(a, b)| (a.0 - b.0).norm_squared())
        .sum();
    let cams = state.cameras.len().max(1) as f64;
    let pts = state.points.len().max(1) as f64;
    Ok(ParamMse {
        camera: cam / (6.0 * cams),
        point: pt / (3.0 * pts),
    })
}

/// Similarity transform `x ↦ s Q x + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Least-squares similarity aligning the points of `state` onto those of
/// `reference` (Umeyama). Needs at least three non-collinear points.
pub fn estimate_similarity(state: &ParamState, reference: &ParamState) -> Result<Similarity> {
    let n = state.points.len();
    if n != reference.points.len() {
        return Err(Error::SizeMismatch("point counts differ".into()));
    }
    if n < 3 {
        return Err(Error::InvalidParameter(
            "similarity alignment needs at least 3 points".into(),
        ));
    }
    let nf = n as f64;
    let mu_a = state.points.iter().map(|p| p.0).sum::<Vector3<f64>>() / nf;
    let mu_b = reference.points.iter().map(|p| p.0).sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_a = 0.0;
    for (a, b) in state.points.iter().zip(&reference.points) {
        let da = a.0 - mu_a;
        cov += (b.0 - mu_b) * da.transpose();
        var_a += da.norm_squared();
    }
    cov /= nf;
    var_a /= nf;
    if var_a <= 0.0 {
        return Err(Error::InvalidParameter("degenerate point set".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = (svd.singular_values.component_mul(&s.diagonal())).sum() / var_a;
    let translation = mu_b - scale * rotation * mu_a;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// Applies a similarity to a whole state, keeping every projection unchanged.
pub fn apply_similarity(state: &ParamState, sim: &Similarity) -> ParamState {
    let q = sim.rotation;
    let points = state
        .points
        .iter()
        .map(|p| ScenePoint(sim.scale * q * p.0 + sim.translation))
        .collect();
    let cameras = state
        .cameras
        .iter()
        .map(|c| {
            let rc = c.rotation() * q.transpose();
            let t = sim.scale * c.t - rc * sim.translation;
            let (alpha, beta, gamma) = euler_from_rotation(&rc);
            CameraParams {
                alpha,
                beta,
                gamma,
                t,
                f: c.f,
            }
        })
        .collect();
    ParamState { cameras, points }
}

/// Parameter MSE after optionally aligning `state` to `reference` by a
/// similarity transform.
pub fn parameter_mse_aligned(state: &ParamState, reference: &ParamState) -> Result<ParamMse> {
    let sim = estimate_similarity(state, reference)?;
    parameter_mse(&apply_similarity(state, &sim), reference)
}
