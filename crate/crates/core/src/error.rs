use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    #[error("requested {requested} non-edges but only {available} are available")]
    InsufficientNonEdges { requested: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    SingleRowBatch(usize),

    #[error("batch size must be at least 2, got {0}")]
    BatchSizeTooSmall(usize),

    #[error("fixed-ratio pools are unbalanced: {pos} positives vs {neg} negatives")]
    UnbalancedPools { pos: usize, neg: usize },

    #[error("invalid batch composition: K={k}, K+={k_pos}, K-={k_neg}")]
    Composition { k: usize, k_pos: usize, k_neg: usize },

    #[error("trace ratio needs at least two classes and two points")]
    SingleClass,

    #[error("no scatter: {0}")]
    NoScatter(String),

    #[error("hits@{k} needs at least {k} negative scores, got {available}")]
    TooFewNegatives { k: usize, available: usize },

    #[error("k-means with k={k} but only {distinct} distinct points")]
    TooFewDistinctPoints { k: usize, distinct: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable class name, used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::InvalidSplit(_) => "invalid_split",
            Error::InsufficientNonEdges { .. } => "insufficient_non_edges",
            Error::EmptyBatch => "empty_batch",
            Error::SingleRowBatch(_) => "single_row_batch",
            Error::BatchSizeTooSmall(_) => "batch_size",
            Error::UnbalancedPools { .. } => "unbalanced_pools",
            Error::Composition { .. } => "composition",
            Error::SingleClass => "single_class",
            Error::NoScatter(_) => "no_scatter",
            Error::TooFewNegatives { .. } => "too_few_negatives",
            Error::TooFewDistinctPoints { .. } => "too_few_distinct_points",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::Divergence { .. } => "divergence",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
