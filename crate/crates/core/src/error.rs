use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth {0} mm")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("frame is empty")]
    EmptyFrame,
    #[error("depth at patch center is invalid")]
    InvalidCenterDepth,
    #[error("only {0} feature candidates in patch, at least 5 required")]
    TooFewFeatures(usize),
    #[error("icosahedron subdivision level {0} exceeds the maximum of 4")]
    LevelTooDeep(u32),
    #[error("object is not visible from the requested view")]
    ObjectOutOfView,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("no valid training patches could be sampled")]
    NoValidPatches,
    #[error("{got} training samples, at least {need} required")]
    TooFewSamples { got: usize, need: usize },
    #[error("object model has no vertices")]
    EmptyModel,
    #[error("no ground truth instances to evaluate against")]
    NoGroundTruth,
    #[error("dataset layout mismatch at {path}: {reason}")]
    LayoutMismatch { path: PathBuf, reason: String },
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("incompatible model: {0}")]
    IncompatibleModel(String),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
