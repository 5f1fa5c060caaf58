//! Run configuration, stored and echoed as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigseg_core::nn::{RlConfig, UNetConfig, DEFAULT_THRESHOLD};
use sigseg_core::AdamConfig;

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub image_size: usize,
    pub fcn: UNetConfig,
    pub rl: RlConfig,
    pub adam: AdamConfig,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// The `*_last` checkpoint is rewritten every this many epochs and after
    /// the final one.
    pub checkpoint_every: usize,
    /// Validation runs every this many epochs and after the final one.
    pub eval_every: usize,
    /// Train on only the first `n` samples of the split.
    #[serde(default)]
    pub max_train_samples: Option<usize>,
    #[serde(default = "default_threshold")]
    pub threshold: f32,
}

fn default_threshold() -> f32 {
    DEFAULT_THRESHOLD
}

impl RunConfig {
    /// 64×64 inputs, depth-3 / base-8 U-Net, 200 + 100 epochs.
    pub fn desk() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/desk"),
            image_size: 64,
            fcn: UNetConfig::desk(),
            rl: RlConfig::standard(),
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            epochs_stage1: 200,
            epochs_stage2: 100,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 10,
            eval_every: 1,
            max_train_samples: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// Single-sample overfitting run of the desk network.
    pub fn overfit() -> Self {
        RunConfig {
            out_dir: PathBuf::from("runs/overfit"),
            epochs_stage2: 1,
            batch_size: 1,
            max_train_samples: Some(1),
            ..RunConfig::desk()
        }
    }

    /// 512×512 inputs, depth-4 / base-64 U-Net, 10000 + 5000 epochs.
    pub fn full() -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/full"),
            image_size: 512,
            fcn: UNetConfig::full(),
            rl: RlConfig::standard(),
            adam: AdamConfig::default(),
            epochs_stage1: 10_000,
            epochs_stage2: 5_000,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 100,
            eval_every: 10,
            max_train_samples: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "overfit" => Ok(Self::overfit()),
            "full" => Ok(Self::full()),
            other => Err(TrainError::Config(format!(
                "unknown profile {other:?} (expected desk, overfit or full)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_stage1 == 0 || self.epochs_stage2 == 0 {
            return Err(TrainError::Config("epoch counts must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("checkpoint and eval cadence must be at least 1".into()));
        }
        if self.max_train_samples == Some(0) {
            return Err(TrainError::Config("max_train_samples must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        self.fcn.check_input(self.image_size, self.image_size)?;
        self.rl.validate()?;
        if self.rl.in_channels != self.fcn.in_channels + self.fcn.out_channels {
            return Err(TrainError::Config(format!(
                "rl.in_channels {} must equal fcn.in_channels {} + fcn.out_channels {}",
                self.rl.in_channels, self.fcn.in_channels, self.fcn.out_channels
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| TrainError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for p in ["desk", "overfit", "full"] {
            RunConfig::profile(p).unwrap().validate().unwrap();
        }
        assert!(RunConfig::profile("huge").is_err());
    }

    #[test]
    fn indivisible_size_is_rejected() {
        let cfg = RunConfig {
            image_size: 60,
            ..RunConfig::desk()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("divisible"), "{err}");
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let cfg = RunConfig::desk();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        v["learning_rate"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }
}
