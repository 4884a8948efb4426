use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("incomplete Cholesky failed: nonpositive pivot {pivot:e} at row {row} after {retries} shifted retries")]
    NonPositivePivot { row: usize, pivot: f64, retries: usize },

    #[error("PCG breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: String },

    #[error("{what} did not converge after {iterations} iterations{}", location.map(|(r, c)| format!(" at ({r}, {c})")).unwrap_or_default())]
    NotConverged {
        what: String,
        iterations: usize,
        location: Option<(usize, usize)>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { context: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Shape(_) => 2,
            Error::Io { .. } | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
