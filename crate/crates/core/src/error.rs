use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("CFL violation: dt = {dt:e} s exceeds cfl*dx/c_max = {limit:e} s")]
    CflViolation { dt: f64, limit: f64 },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dimension count {0}")]
    UnsupportedNdim(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(
        "forward history needs {needed} bytes, over the {budget} byte budget; \
         set a checkpoint interval in GradientOptions"
    )]
    HistoryTooLarge { needed: usize, budget: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code: 2 for bad configuration, 4 for numerical
    /// failures, 3 for everything data-related.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidConfig(_) | Error::CflViolation { .. } => 2,
            Error::Numerical(_) | Error::HistoryTooLarge { .. } => 4,
            Error::Sample { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
