use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the field bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("Gram matrix is not positive definite after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("survey turn {turn}: {source}")]
    SurveyTurn {
        turn: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("vessel state became non-finite at step {step}")]
    NumericalDivergence { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
