use std::fmt;
use std::path::Path;

use pgrtb_core::Error;
use serde::Serialize;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Error reported on stderr as JSON, with the process exit code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID_CONFIG,
            kind: "invalid_config",
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Io { .. } | Error::MalformedRow { .. } | Error::Csv(_) | Error::Json(_) => (EXIT_IO, "io"),
            Error::InvalidArgument(_) | Error::UnknownParameter(_) | Error::SlotMismatch { .. } => {
                (EXIT_INVALID_CONFIG, "invalid_config")
            }
            Error::Infeasible { .. } => (EXIT_INFEASIBLE, "infeasible"),
            Error::Domain(_) => (EXIT_FAILURE, "domain"),
            Error::Quadrature { .. } => (EXIT_FAILURE, "quadrature"),
            Error::InsufficientData(_) => (EXIT_FAILURE, "insufficient_data"),
        };
        CliError {
            code,
            kind,
            message: e.to_string(),
        }
    }
}
