use std::io;

use thiserror::Error;

/// Errors produced by the estimator, inference, protocol and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("r = 0 carries no signal; the asymptotic variance is infinite")]
    InfiniteVariance,

    #[error("malformed frame at byte offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("data source exhausted after {completed} of {requested} rounds")]
    Truncated {
        completed: u64,
        requested: u64,
        state: crate::estimator::EstimatorState,
    },

    #[error("pivot table: {0}")]
    Pivot(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
