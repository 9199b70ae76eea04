use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("size limit exceeded: {what} = {value} exceeds cap {limit}")]
    Size {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid link ({i}, {j}): {reason}")]
    InvalidLink { i: usize, j: usize, reason: String },

    #[error("validity check failed: {0}")]
    Validity(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("positivity violated at step {step}: min eigenvalue {min_eigenvalue:e}")]
    Positivity { step: usize, min_eigenvalue: f64 },

    #[error("trajectory {stream_id} aborted: {source}")]
    Trajectory {
        stream_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble aborted, failed streams {failed:?}: {first}")]
    Ensemble { failed: Vec<u64>, first: Box<Error> },

    #[error("accuracy check failed: {0}")]
    Accuracy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
