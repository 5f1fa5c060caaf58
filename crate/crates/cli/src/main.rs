//! `sigseg`: generate corpora, train, run inference, evaluate and compare.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sigseg", version, about = "Signature segmentation on synthetic documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (PNG images, masks and a manifest).
    Generate(GenerateArgs),
    /// Train stage 1 (FCN), stage 2 (refinement) or both.
    Train(TrainArgs),
    /// Segment one image with a trained checkpoint.
    Infer(InferArgs),
    /// Score a predictor on a corpus split.
    Eval(EvalArgs),
    /// Compare two per-sample reports.
    Stats(StatsArgs),
    /// Finite-difference check of every differentiable operator.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also check that `--size` fits this training profile's network.
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, conflicts_with = "profile")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: desk, overfit or full.
    #[arg(long)]
    pub profile: Option<String>,
    /// 1, 2 or both.
    #[arg(long, default_value = "both")]
    pub stage: String,
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub epochs_stage1: Option<usize>,
    #[arg(long)]
    pub epochs_stage2: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_mask: PathBuf,
    #[arg(long)]
    pub out_extraction: PathBuf,
    /// Network input size; read from the run's config.json when omitted.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Use the FCN output without refinement.
    #[arg(long)]
    pub coarse: bool,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// Required for the fcn_rl and fcn predictors.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Summary JSON path; the per-sample CSV goes next to it.
    #[arg(long)]
    pub report: PathBuf,
    /// fcn_rl, fcn, truth or background.
    #[arg(long, default_value = "fcn_rl")]
    pub predictor: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

#[derive(Args, Serialize)]
pub struct StatsArgs {
    /// Per-sample CSV of the first model (a summary JSON path selects the
    /// CSV beside it).
    #[arg(long = "reportA", alias = "report-a")]
    pub report_a: PathBuf,
    #[arg(long = "reportB", alias = "report-b")]
    pub report_b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per set.
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    /// Seed for subsampling reports larger than `k`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt this operator's backward pass to confirm the check notices.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
