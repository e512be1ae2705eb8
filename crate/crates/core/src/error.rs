use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("patch larger than matrix: {0}")]
    PatchTooLarge(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite activation in {0}")]
    NonFinite(String),

    #[error("backward called without a retained forward pass")]
    NoRetainedForward,

    #[error("attention maps were not retained during the forward pass")]
    AttentionNotRetained,

    #[error("point cloud has {points} points, cap is {cap}; subsample before computing persistence")]
    CloudTooLarge { points: usize, cap: usize },

    #[error("eigen-decomposition failed: {0}")]
    EigenFailure(String),

    #[error("need at least {needed} channels, got {got}")]
    TooFewChannels { needed: usize, got: usize },

    #[error("missing alignment statistics for channel {0}")]
    MissingStats(usize),

    #[error("channel {channel} has zero variance on the training split")]
    ZeroVariance { channel: String },

    #[error("{path}: line {line}: {msg}")]
    Csv { path: String, line: u64, msg: String },

    #[error("missing value at row {row}, column {column} ({name})")]
    MissingValue { row: usize, column: usize, name: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("no test windows: {0}")]
    NoTestWindows(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that indicate a broken internal invariant rather than bad
    /// input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::NoRetainedForward | Error::AttentionNotRetained)
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IndexOutOfRange(_) => "index-out-of-range",
            Error::SeriesTooShort { .. } => "series-too-short",
            Error::PatchTooLarge(_) => "patch-larger-than-matrix",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::InvalidParam(_) => "invalid-param",
            Error::NonFinite(_) => "non-finite-activation",
            Error::NoRetainedForward => "no-retained-forward",
            Error::AttentionNotRetained => "attention-not-retained",
            Error::CloudTooLarge { .. } => "cloud-too-large",
            Error::EigenFailure(_) => "eigen-failure",
            Error::TooFewChannels { .. } => "too-few-channels",
            Error::MissingStats(_) => "missing-stats",
            Error::ZeroVariance { .. } => "zero-variance",
            Error::Csv { .. } => "csv",
            Error::MissingValue { .. } => "missing-value",
            Error::Divergence { .. } => "divergence",
            Error::NoTestWindows(_) => "no-test-windows",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
