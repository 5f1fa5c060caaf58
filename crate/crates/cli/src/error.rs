use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error("gradient check failed for {0}")]
    Gradcheck(String),

    #[error(transparent)]
    Train(#[from] sigseg_train::TrainError),

    #[error(transparent)]
    Eval(#[from] sigseg_eval::EvalError),

    #[error(transparent)]
    Data(#[from] sigseg_synthdoc::SynthError),

    #[error(transparent)]
    Core(#[from] sigseg_core::Error),

    #[error("cannot decode image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn core_is_validation(e: &sigseg_core::Error) -> bool {
    matches!(
        e,
        sigseg_core::Error::Config(_) | sigseg_core::Error::Checkpoint(_) | sigseg_core::Error::Dimension(_)
    )
}

fn data_is_validation(e: &sigseg_synthdoc::SynthError) -> bool {
    use sigseg_synthdoc::SynthError as S;
    match e {
        S::Io(_) => false,
        S::Image(img) => !matches!(img, image::ImageError::IoError(_)),
        S::Core(c) => core_is_validation(c),
        S::Config(_) | S::Manifest(_) | S::Json(_) => true,
    }
}

impl CliError {
    /// 0 success, 1 bad input, 2 failure during the run.
    pub fn exit_code(&self) -> i32 {
        let validation = match self {
            CliError::Usage(_) | CliError::Json(_) => true,
            CliError::Gradcheck(_) | CliError::Io(_) => false,
            CliError::Train(e) => e.is_validation(),
            CliError::Eval(e) => match e {
                sigseg_eval::EvalError::Report(_) | sigseg_eval::EvalError::Json(_) => true,
                sigseg_eval::EvalError::Core(c) => core_is_validation(c),
                sigseg_eval::EvalError::Data(d) => data_is_validation(d),
                _ => false,
            },
            CliError::Data(e) => data_is_validation(e),
            CliError::Core(e) => core_is_validation(e),
            CliError::Image(e) => !matches!(e, image::ImageError::IoError(_)),
        };
        if validation {
            1
        } else {
            2
        }
    }
}
