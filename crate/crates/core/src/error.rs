use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth range: near={near}, far={far} (need far > near > 0)")]
    InvalidRange { near: f64, far: f64 },

    #[error("invalid plane count {0} (need at least 2)")]
    InvalidCount(usize),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("degenerate plane: target camera center lies on the plane at depth {depth}")]
    DegeneratePlane { depth: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cannot composite an empty plane list")]
    EmptyPlaneList,

    #[error("render cache does not match the MPI: {0}")]
    CacheMismatch(String),

    #[error("non-finite loss at step {step}")]
    NonfiniteLoss { step: usize },

    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonfiniteGradient { tensor: usize },

    #[error("frame {frame_id} observes no points")]
    NoPoints { frame_id: u64 },

    #[error("sequence too short: {0}")]
    TooShort(String),

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    TooSmallImage {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("layer depth {depth} does not coincide with any MPI plane")]
    DepthMismatch { depth: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// True for failures caused by bad input (files, flags, shapes) as opposed
    /// to numeric breakdowns during rendering or fitting.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NonfiniteLoss { .. }
                | Error::NonfiniteGradient { .. }
                | Error::DegeneratePlane { .. }
                | Error::CacheMismatch(_)
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
