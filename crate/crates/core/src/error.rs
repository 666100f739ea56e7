use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something that violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Fmap(#[from] FmapError),

    /// A statistic is mathematically undefined for the supplied data.
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("predictor `{variable}` is collinear with the fixed effects or earlier predictors")]
    Collinear { variable: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures when decoding an FMAP activation container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FmapError {
    #[error("bad magic: expected FMAPv1")]
    BadMagic,
    #[error("truncated container: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("payload is {found} bytes but header declares {declared}")]
    ByteCountMismatch { declared: usize, found: usize },
    #[error("tensor `{name}` has invalid shape {shape:?}")]
    BadShape { name: String, shape: Vec<usize> },
    #[error("tensor `{name}`: layer/block indices are not monotone")]
    NonMonotone { name: String },
    #[error("tensor `{name}`: index out of range")]
    IndexOutOfRange { name: String },
    #[error("tensor `{name}`: unsupported dtype `{dtype}`")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("malformed header: {0}")]
    Header(String),
}
