use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point outside the unit ball (norm {norm})")]
    OutsideBall { norm: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("argument {value} outside the domain of {op}")]
    Domain { op: &'static str, value: f64 },

    #[error("backward requires a scalar root, got length {0}")]
    NonScalarRoot(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss term {term} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
