use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the linewidth pipeline.
///
/// Per-scan fit failures are not errors; they are reported through
/// [`crate::fitting::FitStatus`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate line shape: {0}")]
    DegenerateShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("no accepted scans")]
    NoAcceptedScans,

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("zero standard error at sample {index}")]
    ZeroStdErr { index: usize },

    #[error("degenerate model: no accepted fits among {replicas} simulated scans")]
    DegenerateModel { replicas: usize },

    #[error("cannot bin: total expected occurrences {total:.3} below minimum {min}")]
    CannotBin { total: f64, min: f64 },

    #[error("histogram length mismatch: {observed} observed bins vs {expected} expected")]
    LengthMismatch { observed: usize, expected: usize },

    #[error("zero expected occurrences in bin {bin}")]
    ZeroExpected { bin: usize },

    #[error("too many masked grid cells: {masked} of {total}")]
    TooManyMasked { masked: usize, total: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
