//! Evaluation of segmentation outputs: Dice, SSIM and a keypoint match rate
//! per sample, aggregated into reports, plus the normality and rank-sum
//! tests used to compare two models.

pub mod error;
pub mod evaluate;
pub mod keypoint;
pub mod plane;
pub mod report;
pub mod ssim;
pub mod stats;

pub use error::{EvalError, Result};
pub use evaluate::{evaluate_model, evaluate_with_threshold, extraction, score_sample, Predictor};
pub use keypoint::{detect_keypoints, keypoint_match_rate, Keypoint};
pub use plane::Plane;
pub use report::{Aggregate, Metric, MetricReport, SampleMetrics, Summary};
pub use sigseg_core::loss::hard_dice;
pub use ssim::ssim;
pub use stats::{compare_models, mann_whitney, mann_whitney_with, shapiro_wilk, Method, Comparison, StatResult, TestOutcome};
