//! Perspective camera model.
//!
//! A camera is parameterised by three Euler angles `(alpha, beta, gamma)`, a
//! translation `t` and a known focal length `f`. The rotation is
//!
//! ```text
//! R = R3(gamma) * R2(beta) * R1(alpha)
//! ```
//!
//! where `R1`, `R2`, `R3` are right-handed, counterclockwise-positive rotations
//! about the x, y and z axes respectively. A world point `x` is mapped to
//! camera coordinates `p = R x + t`, scaled by `K = diag(f, f, 1)` and divided
//! by depth:
//!
//! ```text
//! u = f * p1 / p3,   v = f * p2 / p3
//! ```

use nalgebra::{Matrix3, SMatrix, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Jacobian2x3 = SMatrix<f64, 2, 3>;
pub type Jacobian2x6 = SMatrix<f64, 2, 6>;

/// Six-DoF pose plus a fixed focal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t: Vector3<f64>,
    pub f: f64,
}

impl CameraParams {
    pub fn new(angles: [f64; 3], t: Vector3<f64>, f: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal length must be positive, got {f}"
            )));
        }
        Ok(Self {
            alpha: angles[0],
            beta: angles[1],
            gamma: angles[2],
            t,
            f,
        })
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_euler(self.alpha, self.beta, self.gamma)
    }

    /// The optimised parameters in order `(alpha, beta, gamma, t1, t2, t3)`.
    pub fn params(&self) -> Vector6<f64> {
        Vector6::new(self.alpha, self.beta, self.gamma, self.t.x, self.t.y, self.t.z)
    }

    pub fn with_params(&self, p: &Vector6<f64>) -> Self {
        Self {
            alpha: p[0],
            beta: p[1],
            gamma: p[2],
            t: Vector3::new(p[3], p[4], p[5]),
            f: self.f,
        }
    }

    pub fn from_params(p: &Vector6<f64>, f: f64) -> Self {
        Self {
            alpha: p[0],
            beta: p[1],
            gamma: p[2],
            t: Vector3::new(p[3], p[4], p[5]),
            f,
        }
    }

    /// Camera centre in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint(pub Vector3<f64>);

impl ScenePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Minimum admissible depth `p3` for a projection to be considered defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGuard {
    pub eps_depth: f64,
}

impl ProjectionGuard {
    pub fn new(eps_depth: f64) -> Result<Self> {
        if !(eps_depth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_depth must be positive, got {eps_depth}"
            )));
        }
        Ok(Self { eps_depth })
    }
}

impl Default for ProjectionGuard {
    fn default() -> Self {
        Self { eps_depth: 1e-6 }
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Matrix3<f64> {
    rot_z(gamma) * rot_y(beta) * rot_x(alpha)
}

/// Inverse of [`rotation_from_euler`]. Returns `beta` in `[-π/2, π/2]`; at the
/// gimbal singularity `alpha` is set to zero.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let sb = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let beta = sb.asin();
    let cb = (r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt();
    if cb > 1e-12 {
        let alpha = r[(2, 1)].atan2(r[(2, 2)]);
        let gamma = r[(1, 0)].atan2(r[(0, 0)]);
        (alpha, beta, gamma)
    } else {
        // R = Rz(gamma) Ry(±π/2); only gamma ∓ alpha is identifiable.
        let gamma = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (0.0, beta, gamma)
    }
}

/// Rodrigues' formula for an angle-axis vector (axis scaled by angle).
pub fn rotation_from_angle_axis(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        // second-order expansion
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`rotation_from_angle_axis`], angle in `[0, π]`.
pub fn angle_axis_from_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-8 {
        return 0.5 * v;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near π the antisymmetric part vanishes; recover the axis from R + I
        let m = r + Matrix3::identity();
        let col = (0..3)
            .map(|c| m.column(c).into_owned())
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .unwrap();
        let mut axis = col.normalize();
        // fix the sign using the (tiny) antisymmetric part when available
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    v * (theta / (2.0 * theta.sin()))
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Camera coordinates `R x + t` of a world point.
pub fn transform(x: &ScenePoint, y: &CameraParams) -> Vector3<f64> {
    y.rotation() * x.0 + y.t
}

pub fn project(x: &ScenePoint, y: &CameraParams, guard: &ProjectionGuard) -> Result<ImagePoint> {
    let p = transform(x, y);
    if !(p.z >= guard.eps_depth) {
        return Err(Error::depth(p.z));
    }
    Ok(ImagePoint::new(y.f * p.x / p.z, y.f * p.y / p.z))
}

/// `z - project(x, y)`.
pub fn residual(z: &ImagePoint, x: &ScenePoint, y: &CameraParams, guard: &ProjectionGuard) -> Result<Vector2<f64>> {
    let proj = project(x, y, guard)?;
    Ok(z.as_vector() - proj.as_vector())
}

/// Projection together with its Jacobian with respect to the point (2×3) and
/// the camera parameters `(alpha, beta, gamma, t1, t2, t3)` (2×6).
pub fn project_with_jacobians(
    x: &ScenePoint,
    y: &CameraParams,
    guard: &ProjectionGuard,
) -> Result<(ImagePoint, Jacobian2x3, Jacobian2x6)> {
    let (ra, rb, rc) = (rot_x(y.alpha), rot_y(y.beta), rot_z(y.gamma));
    let r = rc * rb * ra;
    let p = r * x.0 + y.t;
    if !(p.z >= guard.eps_depth) {
        return Err(Error::depth(p.z));
    }
    let inv_z = 1.0 / p.z;
    let f = y.f;
    let dproj = Jacobian2x3::new(
        f * inv_z,
        0.0,
        -f * p.x * inv_z * inv_z,
        0.0,
        f * inv_z,
        -f * p.y * inv_z * inv_z,
    );

    let jx = dproj * r;

    let d_alpha = rc * rb * drot_x(y.alpha) * x.0;
    let d_beta = rc * drot_y(y.beta) * ra * x.0;
    let d_gamma = drot_z(y.gamma) * rb * ra * x.0;
    let mut jy = Jacobian2x6::zeros();
    jy.set_column(0, &(dproj * d_alpha));
    jy.set_column(1, &(dproj * d_beta));
    jy.set_column(2, &(dproj * d_gamma));
    jy.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);

    Ok((ImagePoint::new(f * p.x * inv_z, f * p.y * inv_z), jx, jy))
}

pub fn projection_jacobians(
    x: &ScenePoint,
    y: &CameraParams,
    guard: &ProjectionGuard,
) -> Result<(Jacobian2x3, Jacobian2x6)> {
    project_with_jacobians(x, y, guard).map(|(_, jx, jy)| (jx, jy))
}

/// Rotation whose optical (third) axis points from `eye` to `target`, with the
/// first axis horizontal. Falls back to the world x axis for `up` when looking
/// straight down.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let up = Vector3::z();
    let mut x = z.cross(&up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
