//! Bundle adjustment by distributed consensus ADMM over both scene points and
//! camera parameters, with a centralized Levenberg-Marquardt baseline, a
//! synthetic orbit-scene generator and BAL-style problem files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod bal;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod lm;
pub mod local_opt;
pub mod losses;
pub mod metrics_csv;
pub mod problem;
pub mod scene_gen;
pub mod trace;

pub use error::{Error, Result};
pub use geometry::{CameraParams, ImagePoint, ProjectionGuard, ScenePoint};
pub use losses::LossKind;
pub use problem::{Observation, ParamState, Problem};
pub use trace::IterationRecord;
