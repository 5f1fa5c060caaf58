use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sigseg_core::gradcheck::{self, CheckedOp, GradcheckOptions};
use sigseg_core::nn::{apply_mask, binarize, DEFAULT_BACKGROUND};
use sigseg_core::Mode;
use sigseg_eval::{compare_models, evaluate_with_threshold, MetricReport, Predictor, TestOutcome};
use sigseg_synthdoc::raster::resize_bilinear;
use sigseg_synthdoc::{build_dataset, Corpus, GenConfig, Gray, Rgb, Split};
use sigseg_train::stage::CONFIG_FILE;
use sigseg_train::{load_model, RunConfig, Stages};

use crate::error::{CliError, Result};
use crate::{EvalArgs, GenerateArgs, GradcheckArgs, InferArgs, StatsArgs, TrainArgs};

/// Prints the resolved configuration and seed of a command.
fn echo(config: &impl Serialize, seed: u64) -> Result<()> {
    println!("config: {}", serde_json::to_string(config)?);
    println!("seed: {seed}");
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let cfg = GenConfig::new(a.seed, a.count, a.size);
    echo(&cfg, a.seed)?;
    if let Some(name) = &a.profile {
        RunConfig::profile(name)?.fcn.check_input(a.size, a.size)?;
    }
    let out = build_dataset(&cfg, &a.out)?;
    let c = &out.manifest.counts;
    println!("split: train {} / val {} / test {}", c.train, c.val, c.test);
    println!("corpus hash: {}", out.corpus_hash);
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.profile) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::profile(name)?,
        (None, None) => RunConfig::desk(),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.image_size {
        cfg.image_size = s;
    }
    if let Some(e) = a.epochs_stage1 {
        cfg.epochs_stage1 = e;
    }
    if let Some(e) = a.epochs_stage2 {
        cfg.epochs_stage2 = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let stages: Stages = a.stage.parse()?;
    let cfg = resolve_train_config(a)?;
    echo(&cfg, cfg.seed)?;
    for o in sigseg_train::train(&cfg, stages, a.resume)? {
        let coarse = o.coarse_val.map(|c| format!(", coarse val dice {c:.4}")).unwrap_or_default();
        println!(
            "{:?}: {} epochs, best val dice {:.4} at epoch {}{coarse}",
            o.stage,
            o.logs.len(),
            o.best_val,
            o.best_epoch,
        );
        println!("  best: {}", o.best_checkpoint.display());
        println!("  last: {}", o.last_checkpoint.display());
        println!("  log:  {}", o.log_path.display());
    }
    Ok(())
}

/// Side information written next to the inferred mask.
#[derive(Serialize)]
struct InferMetadata {
    checkpoint: PathBuf,
    input: PathBuf,
    input_width: usize,
    input_height: usize,
    model_size: usize,
    resized: bool,
    resize: &'static str,
    threshold: f32,
    predictor: &'static str,
    foreground_pixels: usize,
}

fn model_size(a: &InferArgs) -> Result<usize> {
    if let Some(s) = a.size {
        return Ok(s);
    }
    let cfg = a.checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    if !cfg.exists() {
        return Err(CliError::Usage(format!(
            "no {} beside the checkpoint; pass --size",
            CONFIG_FILE
        )));
    }
    Ok(RunConfig::load(&cfg)?.image_size)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    echo(a, 0)?;
    let size = model_size(a)?;
    let mut model = load_model(&a.checkpoint)?;
    let decoded = image::open(&a.input)?.to_rgb8();
    let original = Rgb::from_image(&decoded);
    let resized = original.width != size || original.height != size;
    let input = if resized {
        resize_bilinear(&original, size, size)
    } else {
        original.clone()
    };
    let tensor = input.to_tensor();
    let prob = if a.coarse {
        model.fcn.predict(&tensor, Mode::Eval)?
    } else {
        model.predict(&tensor, Mode::Eval)?.1
    };
    let mask = binarize(&prob, a.threshold);
    let gray = Gray {
        width: size,
        height: size,
        data: mask.data().to_vec(),
    };
    gray.save_png(&a.out_mask)?;
    Rgb::from_tensor(&apply_mask(&tensor, &mask, DEFAULT_BACKGROUND)?)?.save_png(&a.out_extraction)?;

    let meta = InferMetadata {
        checkpoint: a.checkpoint.clone(),
        input: a.input.clone(),
        input_width: original.width,
        input_height: original.height,
        model_size: size,
        resized,
        resize: if resized { "bilinear" } else { "none" },
        threshold: a.threshold,
        predictor: if a.coarse { "fcn" } else { "fcn_rl" },
        foreground_pixels: gray.count_set(),
    };
    let meta_path = a.out_mask.with_extension("json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    println!("mask: {}", a.out_mask.display());
    println!("extraction: {}", a.out_extraction.display());
    println!("metadata: {}", meta_path.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    echo(a, 0)?;
    let split: Split = a.split.parse()?;
    let corpus = Corpus::open(&a.dataset)?;
    let mut model = match (a.predictor.as_str(), &a.checkpoint) {
        ("fcn_rl" | "fcn", Some(path)) => Some(load_model(path)?),
        ("fcn_rl" | "fcn", None) => {
            return Err(CliError::Usage(format!("predictor {} needs --checkpoint", a.predictor)))
        }
        ("truth" | "background", _) => None,
        (other, _) => {
            return Err(CliError::Usage(format!(
                "unknown predictor {other:?} (expected fcn_rl, fcn, truth or background)"
            )))
        }
    };
    let mut predictor = match (a.predictor.as_str(), model.as_mut()) {
        ("fcn_rl", Some(m)) => Predictor::Refined(m),
        ("fcn", Some(m)) => Predictor::Coarse(m),
        ("truth", _) => Predictor::Truth,
        _ => Predictor::Background,
    };
    let report = evaluate_with_threshold(&mut predictor, &corpus, split, a.threshold)?;
    let dir = match a.report.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = a
        .report
        .file_stem()
        .ok_or_else(|| CliError::Usage("--report needs a file name".into()))?
        .to_string_lossy()
        .into_owned();
    report.write(&dir, &stem)?;
    println!("{}", report.summary_json()?);
    println!("report: {}", dir.join(format!("{stem}.csv")).display());
    Ok(())
}

fn report_csv(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("csv")
    } else {
        path.to_path_buf()
    }
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    echo(a, a.seed)?;
    let ra = MetricReport::read_csv(&report_csv(&a.report_a))?;
    let rb = MetricReport::read_csv(&report_csv(&a.report_b))?;
    let cmp = compare_models(&ra, &rb, a.k, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, cmp.to_json()?)?;
    let p = |t: &TestOutcome| t.result().map(|r| format!("{:.4}", r.p_value)).unwrap_or_else(|| "skipped".into());
    println!("{:<10} {:>10} {:>10} {:>10} {:>10} reject", "metric", "shapiro_A", "shapiro_B", "U", "p");
    for (metric, m) in &cmp.metrics {
        let mw = &m.mannwhitney;
        println!(
            "{:<10} {:>10} {:>10} {:>10} {:>10.4} {}",
            metric.name(),
            p(&m.shapiro_a),
            p(&m.shapiro_b),
            mw.statistic,
            mw.p_value,
            mw.reject_null
        );
    }
    println!("comparison: {}", a.out.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    echo(a, a.seed)?;
    let inject_fault = match &a.inject_fault {
        None => None,
        Some(name) => Some(
            CheckedOp::parse(name).ok_or_else(|| CliError::Usage(format!("unknown operator {name:?}")))?,
        ),
    };
    let rows = gradcheck::run(&GradcheckOptions {
        seed: a.seed,
        inject_fault,
    })?;
    println!("{:<16} {:>14} {:>9}  status", "op", "max_rel_err", "elements");
    for r in &rows {
        println!(
            "{:<16} {:>14.3e} {:>9}  {}",
            r.op.name(),
            r.max_rel_err,
            r.elements,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(failed.join(", ")))
    }
}
