use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Several validation failures collected in one pass.
    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical invariant was violated (NaN, norm blow-up, non-convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A memory or size guard refused the request.
    #[error("resource guard: {0}")]
    Resource(String),

    /// A pipeline stage input is missing.
    #[error("missing input {path}: run the `{stage}` stage first")]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { context: context.into(), message: message.to_string() }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::Domain(_)
            | Error::MissingStage { .. }
            | Error::Parse { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Resource(_) => 4,
            Error::Io { .. } => 1,
        }
    }
}
