use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a precondition (shapes, bounds, call ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    /// An optimizer step was refused because the gradient was not finite.
    #[error("update skipped: non-finite gradient in {what}")]
    UpdateSkipped { what: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training aborted at step {step} ({variant}): {source}")]
    Training {
        step: u64,
        variant: String,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation failed at omega {omega:?}: {source}")]
    Evaluation {
        omega: Vec<f64>,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
