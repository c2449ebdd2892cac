//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by the analysis, design and simulation routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} needs {requested} entries, limit is {limit}")]
    CapacityExceeded {
        what: &'static str,
        requested: u128,
        limit: u128,
    },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("threshold design infeasible on branch {branch}: {reason}")]
    DesignInfeasible { branch: String, reason: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("power allocation infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
