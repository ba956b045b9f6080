use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    /// `row` is the 1-based data row (the header is not counted).
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("domain {0} has no rows")]
    EmptyDomain(i64),

    #[error("dataset has no data rows")]
    EmptyDataset,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{0}` has zero pooled variance")]
    ZeroVariance(String),

    #[error("need at least 2 rows to fit a density model, got {0}")]
    InsufficientData(usize),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("density vector has zero mass")]
    DegenerateDensity,

    #[error("all points are identical")]
    DegeneratePoints,

    #[error("kernel matrices differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("too few samples for the test: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("{got} candidates exceeds the cap of {cap}")]
    TooManyCandidates { got: usize, cap: usize },

    #[error("length mismatch: {0} reports vs {1} truths")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
