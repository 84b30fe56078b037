//! Misfit penalties on 2D reprojection residuals.
//!
//! `SquaredL2` is `‖r‖²` with no ½ factor. `Huber` acts on the residual norm
//! `a = ‖r‖`: `a²/2` for `a ≤ δ`, `δ(a - δ/2)` otherwise. The two are distinct
//! functions, not rescalings of one another.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    SquaredL2,
    Huber { delta: f64 },
}

impl LossKind {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Huber delta must be positive, got {delta}"
            )));
        }
        Ok(LossKind::Huber { delta })
    }

    pub fn value(&self, r: &Vector2<f64>) -> f64 {
        loss_value(*self, r)
    }

    pub fn gradient(&self, r: &Vector2<f64>) -> Vector2<f64> {
        loss_gradient(*self, r)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SquaredL2 => "l2",
            LossKind::Huber { .. } => "huber",
        }
    }
}

pub fn loss_value(kind: LossKind, r: &Vector2<f64>) -> f64 {
    match kind {
        LossKind::SquaredL2 => r.norm_squared(),
        LossKind::Huber { delta } => {
            let a = r.norm();
            if a <= delta {
                0.5 * a * a
            } else {
                delta * (a - 0.5 * delta)
            }
        }
    }
}

pub fn loss_gradient(kind: LossKind, r: &Vector2<f64>) -> Vector2<f64> {
    match kind {
        LossKind::SquaredL2 => 2.0 * r,
        LossKind::Huber { delta } => {
            let a = r.norm();
            if a <= delta {
                *r
            } else {
                r * (delta / a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HUBER1: LossKind = LossKind::Huber { delta: 1.0 };

    #[test]
    fn values() {
        assert_eq!(loss_value(LossKind::SquaredL2, &Vector2::new(3.0, 4.0)), 25.0);
        assert_eq!(loss_value(HUBER1, &Vector2::zeros()), 0.0);
        assert_eq!(loss_value(HUBER1, &Vector2::new(3.0, 4.0)), 4.5);
    }

    #[test]
    fn gradients() {
        assert_eq!(
            loss_gradient(LossKind::SquaredL2, &Vector2::new(1.0, 2.0)),
            Vector2::new(2.0, 4.0)
        );
        assert_eq!(loss_gradient(HUBER1, &Vector2::new(0.3, 0.0)), Vector2::new(0.3, 0.0));
        assert_eq!(loss_gradient(HUBER1, &Vector2::zeros()), Vector2::zeros());
        assert_eq!(loss_gradient(LossKind::SquaredL2, &Vector2::zeros()), Vector2::zeros());
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(LossKind::huber(0.0).is_err());
        assert!(LossKind::huber(-1.0).is_err());
        assert!(LossKind::huber(f64::NAN).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let r: Vector2<f64> = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let delta: f64 = rng.random_range(0.2..2.0);
            if (r.norm() - delta).abs() <= 1e-3 {
                continue;
            }
            for kind in [LossKind::SquaredL2, LossKind::Huber { delta }] {
                let g = loss_gradient(kind, &r);
                for k in 0..2 {
                    let mut rp = r;
                    let mut rm = r;
                    rp[k] += h;
                    rm[k] -= h;
                    let fd = (loss_value(kind, &rp) - loss_value(kind, &rm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-7 * (1.0 + g[k].abs()), "{kind:?} {r:?}");
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn continuous_at_threshold() {
        let delta = 0.7;
        let dir = Vector2::new(0.6, 0.8);
        let below = dir * (delta - 1e-12);
        let above = dir * (delta + 1e-12);
        let kind = LossKind::Huber { delta };
        assert!((loss_value(kind, &below) - loss_value(kind, &above)).abs() < 1e-11);
        assert!((loss_gradient(kind, &below) - loss_gradient(kind, &above)).norm() < 1e-11);
    }

    proptest! {
        #[test]
        fn nonnegative_and_symmetric(x in -50.0f64..50.0, y in -50.0f64..50.0, delta in 0.01f64..10.0, theta in 0.0f64..6.3) {
            let r = Vector2::new(x, y);
            let rot = nalgebra::Rotation2::new(theta) * r;
            for kind in [LossKind::SquaredL2, LossKind::Huber { delta }] {
                let v = loss_value(kind, &r);
                prop_assert!(v >= 0.0);
                prop_assert_eq!(v == 0.0, r == Vector2::zeros());
                prop_assert!((v - loss_value(kind, &rot)).abs() <= 1e-9 * (1.0 + v));
            }
        }

        #[test]
        fn huber_bounded_by_half_square(x in -50.0f64..50.0, y in -50.0f64..50.0, delta in 0.01f64..10.0) {
            let r = Vector2::new(x, y);
            let h = loss_value(LossKind::Huber { delta }, &r);
            let half = 0.5 * r.norm_squared();
            prop_assert!(h <= half + 1e-12 * (1.0 + half));
            if r.norm() <= delta {
                prop_assert!((h - half).abs() <= 1e-12 * (1.0 + half));
            } else if r.norm() > delta * (1.0 + 1e-6) {
                prop_assert!(h < half);
            }
        }

        #[test]
        fn convex_along_segments(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0,
            t in 0.0f64..1.0, delta in 0.1f64..3.0,
        ) {
            let a = Vector2::new(ax, ay);
            let b = Vector2::new(bx, by);
            let m = a * (1.0 - t) + b * t;
            for kind in [LossKind::SquaredL2, LossKind::Huber { delta }] {
                let lhs = loss_value(kind, &m);
                let rhs = (1.0 - t) * loss_value(kind, &a) + t * loss_value(kind, &b);
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }
    }
}
