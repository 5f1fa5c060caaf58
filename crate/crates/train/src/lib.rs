//! Two-stage training: the FCN first, then the refinement block on top of
//! the frozen FCN.

pub mod config;
pub mod error;
pub mod loader;
pub mod log;
pub mod stage;

use std::path::PathBuf;

pub use config::RunConfig;
pub use error::{Result, TrainError};
pub use loader::split_loader;
pub use log::EpochLog;
pub use stage::{load_model, train_stage1, train_stage2, StageOutcome};

/// Which stages a call to [`train`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stages {
    One,
    Two,
    Both,
}

impl std::str::FromStr for Stages {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stages::One),
            "2" => Ok(Stages::Two),
            "both" => Ok(Stages::Both),
            other => Err(TrainError::Config(format!(
                "unknown stage {other:?} (expected 1, 2 or both)"
            ))),
        }
    }
}

/// Runs the selected stages. Stage 2 starts from the best stage-1
/// checkpoint in the run directory.
pub fn train(cfg: &RunConfig, stages: Stages, resume: bool) -> Result<Vec<StageOutcome>> {
    let mut out = Vec::new();
    if matches!(stages, Stages::One | Stages::Both) {
        out.push(train_stage1(cfg, resume)?);
    }
    if matches!(stages, Stages::Two | Stages::Both) {
        let fcn: PathBuf = cfg
            .out_dir
            .join(stage::best_checkpoint_file(sigseg_core::nn::Stage::Fcn));
        if !fcn.exists() {
            return Err(TrainError::Config(format!(
                "stage 2 needs a stage-1 checkpoint at {}",
                fcn.display()
            )));
        }
        out.push(train_stage2(cfg, &fcn, resume)?);
    }
    Ok(out)
}
