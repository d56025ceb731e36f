use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {estimate}, achieved error {achieved_error:e})")]
    Quadrature {
        estimate: f64,
        achieved_error: f64,
        subdivisions: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("infeasible: forward target {target} exceeds achievable maximum {maximum}")]
    Infeasible { target: f64, maximum: f64 },

    #[error("slot mismatch: expected {expected}, found {found}")]
    SlotMismatch { expected: String, found: String },

    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
