use thiserror::Error;

use crate::model::StarMode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column count {k} is outside 0..={n}")]
    OutOfRange { k: u64, n: u64 },

    #[error("malformed network: {0}")]
    MalformedNetwork(String),

    #[error("{mode} is infeasible: processor {processor} would receive a non-positive share")]
    InfeasibleMode { mode: StarMode, processor: usize },

    #[error("linear program is infeasible")]
    LpInfeasible,

    #[error("linear program is unbounded")]
    LpUnbounded,

    #[error("simplex numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid linear program: {0}")]
    InvalidProgram(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("algorithm {algorithm} cannot run on a {kind} network")]
    KindMismatch { algorithm: String, kind: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
