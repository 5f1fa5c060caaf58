use thiserror::Error;

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric error: {0}")]
    Metric(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Core(#[from] sigseg_core::Error),

    #[error(transparent)]
    Data(#[from] sigseg_synthdoc::SynthError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
