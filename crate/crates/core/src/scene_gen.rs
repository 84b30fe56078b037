//! Synthetic orbit scenes.
//!
//! Cameras are equally spaced in angle on a horizontal circle at a fixed
//! altitude, aimed at the centroid of an axis-aligned box of scene points,
//! then jittered in position and orientation. Point `k` is visible in the
//! `w` consecutive frames starting at `floor(k m / n)`, wrapping around the
//! orbit.
//!
//! All randomness comes from `ChaCha8Rng` seeded with the 64-bit seed of the
//! config; output is a deterministic function of the config.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    euler_from_rotation, look_at, project, rotation_from_euler, transform, CameraParams, ProjectionGuard, ScenePoint,
};
use crate::problem::{Observation, ParamState, Problem};

const MAX_POINT_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRegion {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl PointRegion {
    pub fn centroid(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

impl Default for PointRegion {
    fn default() -> Self {
        Self {
            min: [-100.0, -100.0, -20.0],
            max: [100.0, 100.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJitter {
    /// Standard deviation of the camera-centre offset, meters.
    pub sigma_trans: f64,
    /// Standard deviation added to each Euler angle, radians.
    pub sigma_rot: f64,
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self {
            sigma_trans: 10.0,
            sigma_rot: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_cameras: usize,
    pub n_points: usize,
    pub orbit_radius: f64,
    pub altitude: f64,
    pub point_region: PointRegion,
    pub pose_jitter: PoseJitter,
    /// Number of consecutive frames each point is visible in.
    pub visibility_window: usize,
    pub focal: f64,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_cameras: 5,
            n_points: 10,
            orbit_radius: 1000.0,
            altitude: 1500.0,
            point_region: PointRegion::default(),
            pose_jitter: PoseJitter::default(),
            visibility_window: 5,
            focal: 500.0,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_cameras < 1 || self.n_points < 1 {
            return bad("camera and point counts must be at least 1".into());
        }
        if self.visibility_window < 2 {
            return bad("visibility window must be at least 2".into());
        }
        if self.visibility_window > self.n_cameras {
            return bad(format!(
                "visibility window {} exceeds camera count {}",
                self.visibility_window, self.n_cameras
            ));
        }
        if !(self.orbit_radius > 0.0 && self.altitude > 0.0 && self.focal > 0.0) {
            return bad("radius, altitude and focal length must be positive".into());
        }
        let r = &self.point_region;
        if (0..3).any(|k| !(r.min[k] <= r.max[k])) {
            return bad("point region min must not exceed max".into());
        }
        if !(self.pose_jitter.sigma_trans >= 0.0 && self.pose_jitter.sigma_rot >= 0.0) {
            return bad("jitter standard deviations must be nonnegative".into());
        }
        Ok(())
    }

    /// Cameras observing point `k`, in frame order.
    pub fn window(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.n_cameras;
        let start = (k * m) / self.n_points;
        (0..self.visibility_window).map(move |o| (start + o) % m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitPerturbation {
    /// Noise on every Euler angle and translation coordinate.
    pub sigma_cam: f64,
    pub sigma_point: f64,
    pub rng_seed: u64,
}

impl Default for InitPerturbation {
    fn default() -> Self {
        Self {
            sigma_cam: 0.1,
            sigma_point: 0.2,
            rng_seed: 1,
        }
    }
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn gaussian3(rng: &mut ChaCha8Rng, d: &Normal<f64>) -> Vector3<f64> {
    Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng))
}

/// Generates a noiseless problem and its ground truth.
pub fn generate_scene(config: &SceneConfig) -> Result<(Problem, ParamState)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let m = config.n_cameras;
    let n = config.n_points;
    let target = config.point_region.centroid();
    let trans_noise = normal(config.pose_jitter.sigma_trans)?;
    let rot_noise = normal(config.pose_jitter.sigma_rot)?;

    let mut cameras = Vec::with_capacity(m);
    for j in 0..m {
        let theta = std::f64::consts::TAU * j as f64 / m as f64;
        let nominal = Vector3::new(
            config.orbit_radius * theta.cos(),
            config.orbit_radius * theta.sin(),
            config.altitude,
        ) + Vector3::new(target.x, target.y, 0.0);
        let eye = nominal + gaussian3(&mut rng, &trans_noise);
        let (a, b, c) = euler_from_rotation(&look_at(&eye, &target));
        let angles = Vector3::new(a, b, c) + gaussian3(&mut rng, &rot_noise);
        let r = rotation_from_euler(angles.x, angles.y, angles.z);
        cameras.push(CameraParams::new(
            [angles.x, angles.y, angles.z],
            -(r * eye),
            config.focal,
        )?);
    }

    let guard = ProjectionGuard::default();
    let region = config.point_region;
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_POINT_RETRIES {
            let p = ScenePoint(Vector3::from_fn(|d, _| {
                if region.min[d] < region.max[d] {
                    rng.random_range(region.min[d]..region.max[d])
                } else {
                    region.min[d]
                }
            }));
            if config
                .window(k)
                .all(|j| transform(&p, &cameras[j]).z >= guard.eps_depth)
            {
                accepted = Some(p);
                break;
            }
        }
        let p = accepted.ok_or_else(|| {
            Error::ProjectionFailed(format!("point {k} fell behind a camera in {MAX_POINT_RETRIES} draws"))
        })?;
        points.push(p);
    }

    let mut observations = Vec::with_capacity(n * config.visibility_window);
    for (k, p) in points.iter().enumerate() {
        for j in config.window(k) {
            observations.push(Observation {
                camera: j,
                point: k,
                z: project(p, &cameras[j], &guard)?,
            });
        }
    }
    observations.sort_by_key(|o| (o.camera, o.point));
    let problem = Problem::new(m, n, observations).map_err(|e| match e {
        Error::Coverage(msg) => {
            Error::InvalidParameter(format!("visibility window too short to cover every camera: {msg}"))
        }
        other => other,
    })?;
    Ok((problem, ParamState { cameras, points }))
}

/// Adds i.i.d. Gaussian noise to every angle, translation coordinate and
/// point coordinate. Focal lengths are untouched.
pub fn perturb(state: &ParamState, pert: &InitPerturbation) -> Result<ParamState> {
    if !(pert.sigma_cam >= 0.0 && pert.sigma_point >= 0.0) {
        return Err(Error::InvalidParameter(
            "perturbation standard deviations must be nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pert.rng_seed);
    let cam = normal(pert.sigma_cam)?;
    let pt = normal(pert.sigma_point)?;
    let cameras = state
        .cameras
        .iter()
        .map(|c| {
            let mut p = c.params();
            for v in p.iter_mut() {
                *v += cam.sample(&mut rng);
            }
            c.with_params(&p)
        })
        .collect();
    let points = state
        .points
        .iter()
        .map(|p| ScenePoint(p.0 + gaussian3(&mut rng, &pt)))
        .collect();
    Ok(ParamState { cameras, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{mean_reprojection_error, parameter_mse};

    #[test]
    fn full_window_scene_has_fifty_observations() {
        let cfg = SceneConfig {
            n_cameras: 5,
            n_points: 10,
            visibility_window: 5,
            ..Default::default()
        };
        let (problem, gt) = generate_scene(&cfg).unwrap();
        assert_eq!(problem.num_observations(), 50);
        assert_eq!(gt.cameras.len(), 5);
        assert_eq!(gt.points.len(), 10);
        let err = mean_reprojection_error(&problem, &gt, &ProjectionGuard::default()).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig {
            rng_seed: 42,
            ..Default::default()
        };
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn windowed_visibility() {
        let cfg = SceneConfig {
            n_cameras: 12,
            n_points: 40,
            visibility_window: 3,
            ..Default::default()
        };
        let (problem, gt) = generate_scene(&cfg).unwrap();
        assert_eq!(problem.num_observations(), 120);
        for cams in &problem.visibility().by_point {
            assert_eq!(cams.len(), 3);
        }
        assert!(problem.visibility().by_camera.iter().all(|p| !p.is_empty()));
        let g = ProjectionGuard::default();
        for o in problem.observations() {
            let z = project(&gt.points[o.point], &gt.cameras[o.camera], &g).unwrap();
            assert_eq!(z, o.z);
        }
    }

    #[test]
    fn cameras_sit_on_the_orbit() {
        let cfg = SceneConfig {
            pose_jitter: PoseJitter {
                sigma_trans: 0.0,
                sigma_rot: 0.0,
            },
            ..Default::default()
        };
        let (_, gt) = generate_scene(&cfg).unwrap();
        for c in &gt.cameras {
            let center = c.center();
            assert!((center.xy().norm() - 1000.0).abs() < 1e-6);
            assert!((center.z - 1500.0).abs() < 1e-6);
            // the region centroid lies on the optical axis
            let p = transform(&ScenePoint(Vector3::zeros()), c);
            assert!(p.x.abs() < 1e-6 && p.y.abs() < 1e-6 && p.z > 0.0);
        }
    }

    #[test]
    fn invalid_configs() {
        let base = SceneConfig::default();
        assert!(generate_scene(&SceneConfig { n_points: 0, ..base }).is_err());
        assert!(generate_scene(&SceneConfig {
            visibility_window: 1,
            ..base
        })
        .is_err());
        assert!(generate_scene(&SceneConfig {
            visibility_window: 6,
            ..base
        })
        .is_err());
        assert!(generate_scene(&SceneConfig { focal: 0.0, ..base }).is_err());
        // 2 points with window 2 cannot cover 10 cameras
        let sparse = SceneConfig {
            n_cameras: 10,
            n_points: 2,
            visibility_window: 2,
            ..base
        };
        assert!(matches!(generate_scene(&sparse), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn points_behind_cameras_are_rejected() {
        // wild orientation jitter turns some cameras away from the scene
        let cfg = SceneConfig {
            pose_jitter: PoseJitter {
                sigma_trans: 0.0,
                sigma_rot: 10.0,
            },
            ..Default::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::ProjectionFailed(_))));
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let (_, gt) = generate_scene(&SceneConfig::default()).unwrap();
        let p = perturb(
            &gt,
            &InitPerturbation {
                sigma_cam: 0.0,
                sigma_point: 0.0,
                rng_seed: 3,
            },
        )
        .unwrap();
        assert_eq!(p, gt);
    }

    #[test]
    fn perturbation_is_deterministic_and_keeps_focal() {
        let (_, gt) = generate_scene(&SceneConfig::default()).unwrap();
        let pert = InitPerturbation {
            sigma_cam: 0.1,
            sigma_point: 0.5,
            rng_seed: 8,
        };
        let a = perturb(&gt, &pert).unwrap();
        assert_eq!(a, perturb(&gt, &pert).unwrap());
        assert!(a.cameras.iter().zip(&gt.cameras).all(|(x, y)| x.f == y.f));
        assert!(perturb(
            &gt,
            &InitPerturbation {
                sigma_cam: -1.0,
                ..pert
            }
        )
        .is_err());
    }

    #[test]
    fn point_noise_is_calibrated() {
        let (_, gt) = generate_scene(&SceneConfig {
            n_points: 10,
            ..Default::default()
        })
        .unwrap();
        let seeds = 100;
        let samples: Vec<f64> = (0..seeds)
            .map(|s| {
                let p = perturb(
                    &gt,
                    &InitPerturbation {
                        sigma_cam: 0.0,
                        sigma_point: 1.0,
                        rng_seed: s,
                    },
                )
                .unwrap();
                parameter_mse(&p, &gt).unwrap().point
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / seeds as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (seeds as f64 - 1.0);
        let stderr = (var / seeds as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
    }
}
