use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error for patient {patient}: {message}")]
    Validation { patient: String, message: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite log posterior (patient {patient})")]
    NonFinite { patient: String },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("imputation parameters not estimable at visit {visit}: {reason}")]
    NonEstimable { visit: usize, reason: String },

    #[error("model not identifiable: {0}")]
    Identifiability(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config {
            line: None,
            message: message.into(),
        }
    }

    /// Process exit code for command-line use.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Config { .. } | Error::InvalidArgument(_) => 2,
            Error::Parse { .. } | Error::Validation { .. } | Error::Dataset(_) => 3,
            Error::NonEstimable { .. } => 4,
            Error::Numerical(_) | Error::NonFinite { .. } | Error::Optimization(_) | Error::Identifiability(_) => 5,
        }
    }
}
