use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("training is degenerate: {0}")]
    DegenerateTraining(String),

    #[error("clicked document at rank {rank} has zero propensity")]
    ZeroPropensity { rank: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("degenerate variance in samples")]
    DegenerateVariance,

    #[error("unknown query id {0:?}")]
    UnknownQuery(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
