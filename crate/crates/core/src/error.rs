use thiserror::Error;

use crate::rank::EssentialRankResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate basis: function {index} has projection residual norm {residual:e}")]
    DegenerateBasis { index: usize, residual: f64 },

    #[error("rank deficient: requested {requested} positive eigenvalues, only {available} available")]
    RankDeficient { requested: usize, available: usize },

    #[error("no rank satisfies both the scree cutoff and the condition-number cap")]
    NoFeasibleRank(Box<EssentialRankResult>),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
