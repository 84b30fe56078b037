use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("projected depth {depth} is below the guard (point {point:?}, camera {camera:?})")]
    DepthBelowGuard {
        depth: f64,
        point: Option<usize>,
        camera: Option<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate observation of point {point} by camera {camera}")]
    DuplicateObservation { point: usize, camera: usize },

    #[error("{kind} index {index} out of range (count {count})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        count: usize,
    },

    #[error("coverage violated: {0}")]
    Coverage(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("scene generation failed: {0}")]
    ProjectionFailed(String),

    #[error("linear system is singular even with damping")]
    SingularSystem,

    #[error("block {block}: {source}")]
    Block {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn depth(depth: f64) -> Self {
        Error::DepthBelowGuard {
            depth,
            point: None,
            camera: None,
        }
    }

    /// Attaches observation indices to a bare depth failure.
    pub(crate) fn at(self, point: usize, camera: usize) -> Self {
        match self {
            Error::DepthBelowGuard { depth, .. } => Error::DepthBelowGuard {
                depth,
                point: Some(point),
                camera: Some(camera),
            },
            other => other,
        }
    }
}
