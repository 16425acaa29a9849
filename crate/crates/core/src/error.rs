use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the models, filters, samplers and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every particle weight underflowed at the given (1-based) time index.
    #[error("particle filter degenerate at t = {t}: all weights are zero")]
    FilterDegenerate { t: usize },

    #[error("chain initialisation failed after {attempts} attempts: log-likelihood is -inf")]
    InitializationFailure { attempts: usize },

    /// The current state of a chain produced an invalid likelihood.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

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
