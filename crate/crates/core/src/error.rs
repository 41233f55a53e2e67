use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("shape mismatch for {path}: expected {expected_bytes} bytes, found {actual_bytes}")]
    ShapeMismatch {
        path: PathBuf,
        expected_bytes: u64,
        actual_bytes: u64,
    },

    #[error("non-finite value in {tensor} at flat index {index}")]
    NonFiniteValue { tensor: String, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("result does not belong to this stream: {0}")]
    ConfigMismatch(String),

    #[error("length {len} is not divisible by pool size {pool}")]
    IndivisibleLength { len: usize, pool: usize },

    #[error("budget {requested} out of range [0, {available}]")]
    BudgetOutOfRange { requested: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("need at least 2 tokens for density scoring, got {0}")]
    TooFewTokens(usize),

    #[error("compressed token count {compressed} exceeds full count {full}")]
    OrderViolation { compressed: u64, full: u64 },

    #[error("stream failed validation: {0}")]
    ValidationFailed(String),

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
