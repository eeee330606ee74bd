use thiserror::Error;

use crate::transport::TransportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient observations: need at least {needed}, have {got}")]
    InsufficientObservations { needed: usize, got: usize },

    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no applicable records: {0}")]
    NoApplicableRecords(&'static str),

    #[error("csv row {row}: {message}")]
    CsvRow { row: u64, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("both executors failed for task {task_id}: local: {local}; cloud: {cloud}")]
    ExecutorsExhausted {
        task_id: u64,
        local: String,
        cloud: String,
    },

    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
