use thiserror::Error;

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("freeze violation: {0}")]
    Freeze(String),

    #[error(transparent)]
    Core(#[from] sigseg_core::Error),

    #[error(transparent)]
    Data(#[from] sigseg_synthdoc::SynthError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    /// True for errors caused by bad input (flags, configs, files) rather than
    /// by the run itself.
    pub fn is_validation(&self) -> bool {
        match self {
            TrainError::Config(_) | TrainError::Checkpoint(_) | TrainError::Json(_) => true,
            TrainError::Core(e) => matches!(
                e,
                sigseg_core::Error::Config(_) | sigseg_core::Error::Checkpoint(_)
            ),
            TrainError::Data(e) => !matches!(e, sigseg_synthdoc::SynthError::Io(_)),
            TrainError::Freeze(_) | TrainError::Io(_) => false,
        }
    }
}
