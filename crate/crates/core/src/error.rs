use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("sample {sample_id} has no attribute `{attribute}`")]
    Keying { sample_id: usize, attribute: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("index {index} out of range for {len} contracts")]
    Bounds { index: usize, len: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("coverage is undefined before any step is recorded")]
    UndefinedCoverage,
    #[error("diameter undefined: contract graph is disconnected")]
    DiameterUndefined,
    #[error("data error: {0}")]
    Data(String),
    #[error("row {row}: {message}")]
    Ingest { row: usize, message: String },
    #[error("non-finite value during training at step {step}: {what}")]
    NonFinite { step: u64, what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
