use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("manifest has a header but no data rows")]
    EmptyManifest,
    #[error("sampling window [{start}, {end}] exceeds the {available} available source frames")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        available: usize,
    },
    #[error("need at least {needed} source frames, got {got}")]
    TooFewSourceFrames { needed: usize, got: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("no cardiac phase information for {0}")]
    NoPhaseInfo(String),
    #[error("patch size {patch} does not divide frame size {height}x{width}")]
    IndivisibleDimensions {
        patch: usize,
        height: usize,
        width: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask ratio {0} outside [0, 1)")]
    InvalidRatio(f64),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("reconstruction loss needs at least one masked patch")]
    EmptyMaskSet,
    #[error("frame {0} has no tokens to average")]
    EmptyFrame(usize),
    #[error("feature norm below {0:e}")]
    DegenerateNorm(f64),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("value {0} out of range")]
    OutOfRange(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metric needs both classes present")]
    SingleClassOnly,
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Process exit code: 1 config/usage, 2 data or metric precondition, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::IncompatibleCheckpoint(_) => 1,
            Error::DivergenceDetected { .. }
            | Error::NonFiniteActivation(_)
            | Error::NonFiniteGradient(_) => 3,
            _ => 2,
        }
    }
}
