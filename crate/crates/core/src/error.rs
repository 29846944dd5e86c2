use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dense oracle refused for n = {n} (limit {limit}); use the krylov estimator instead")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("missing effective resistance for edge ({p}, {q})")]
    MissingResistance { p: usize, q: usize },

    #[error("output graph has isolated nodes: {0:?}")]
    IsolatedNodes(Vec<usize>),

    #[error("background task failed: {0}")]
    Background(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
