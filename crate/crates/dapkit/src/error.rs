use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum DapError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("score error: {0}")]
    Score(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("integrity error at offset {offset}: {msg}")]
    Integrity { offset: u64, msg: String },
    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DapError>;
