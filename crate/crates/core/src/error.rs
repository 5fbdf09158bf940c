use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {0} has zero norm")]
    ZeroVector(usize),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("class {0} has no samples")]
    EmptyClass(u32),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid k: {0}")]
    BadK(String),
    #[error("covariance is not invertible: {0}")]
    Degenerate(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty score set")]
    EmptyInput,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::BadK(_) | Error::Spec(_) | Error::Config(_) => ErrorKind::Config,
            Error::Degenerate(_) | Error::NonFinite(_) | Error::Diverged(_) => ErrorKind::Numeric,
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
