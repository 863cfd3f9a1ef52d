use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain an operation accepts.
    #[error("invalid input: {0}")]
    InputDomain(String),

    #[error("unknown key: {0}")]
    Lookup(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The conditioning payload does not match the model's mode.
    #[error("conditioning mode mismatch: {0}")]
    Mode(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("training diverged at step {step} (last finite loss {last_loss:?} at step {last_good_step:?})")]
    TrainingDiverged {
        step: usize,
        last_good_step: Option<usize>,
        last_loss: Option<f64>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
