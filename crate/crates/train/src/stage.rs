//! Stage 1 trains the FCN alone; stage 2 freezes it and trains the
//! refinement block on `concat(image, FCN(image))`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};
use sigseg_core::loss::{hard_dice, DEFAULT_SMOOTH};
use sigseg_core::nn::{binarize, ModelGraph, RlConfig, SegmentationModel, Stage, UNetConfig};
use sigseg_core::{ops, Adam, Checkpoint, Mode, NamedTensor, Tape, Tensor};
use sigseg_synthdoc::{Corpus, LoadedSample, Split};

use crate::config::RunConfig;
use crate::error::{Result, TrainError};
use crate::loader::{batch_order, epoch_seed};
use crate::log::{read_csv, write_csv, EpochLog};

pub const CONFIG_FILE: &str = "config.json";

/// File names inside the run directory.
pub fn log_file(stage: Stage) -> String {
    format!("stage{}.csv", stage_no(stage))
}

pub fn best_checkpoint_file(stage: Stage) -> String {
    format!("stage{}_best.ckpt", stage_no(stage))
}

pub fn last_checkpoint_file(stage: Stage) -> String {
    format!("stage{}_last.ckpt", stage_no(stage))
}

fn stage_no(stage: Stage) -> u64 {
    match stage {
        Stage::Fcn => 1,
        Stage::Rl => 2,
    }
}

fn progress_name(stage: Stage) -> String {
    format!("train.stage{}.progress", stage_no(stage))
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    /// Validation hard Dice of the frozen FCN alone (stage 2 only).
    pub coarse_val: Option<f64>,
    /// SHA-256 of the FCN parameter bytes at the end of the stage.
    pub fcn_hash: String,
}

/// Training resume point stored next to the optimizer state.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Progress {
    epochs_done: usize,
    best_epoch: usize,
    best_val: f64,
}

impl Progress {
    fn to_tensor(self, stage: Stage) -> NamedTensor {
        // Each 16-bit chunk is exact in f32.
        let bits = self.best_val.to_bits();
        let chunk = |k: u32| ((bits >> (16 * k)) & 0xffff) as f32;
        NamedTensor {
            name: progress_name(stage),
            dims: vec![6],
            data: vec![
                self.epochs_done as f32,
                self.best_epoch as f32,
                chunk(0),
                chunk(1),
                chunk(2),
                chunk(3),
            ],
        }
    }

    fn from_checkpoint(ckpt: &Checkpoint, stage: Stage) -> Result<Self> {
        let name = progress_name(stage);
        let t = ckpt
            .optimizer_tensor(&name)
            .filter(|t| t.data.len() == 6)
            .ok_or_else(|| TrainError::Checkpoint(format!("tensor {name} missing or malformed")))?;
        let bits = (0..4).fold(0u64, |acc, k| acc | ((t.data[2 + k] as u64) << (16 * k)));
        Ok(Progress {
            epochs_done: t.data[0] as usize,
            best_epoch: t.data[1] as usize,
            best_val: f64::from_bits(bits),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    sigseg_synthdoc::dataset::hex(&Sha256::digest(bytes))
}

pub fn fcn_hash(model: &SegmentationModel) -> String {
    sha256_hex(&model.fcn.parameter_bytes())
}

fn model_state(model: &SegmentationModel) -> Vec<NamedTensor> {
    let mut out = model.fcn.state();
    out.extend(model.rl.state());
    out
}

/// Rebuilds a full model from a checkpoint, inferring both configurations
/// from the stored tensors.
pub fn load_model(path: &Path) -> Result<SegmentationModel> {
    let ckpt = Checkpoint::load(path)?;
    model_from_checkpoint(&ckpt)
}

pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<SegmentationModel> {
    let fcn = UNetConfig::infer(&ckpt.model)?;
    let rl = RlConfig::infer(&ckpt.model)?;
    let mut model = SegmentationModel::new(fcn, rl, 0)?;
    model.fcn.load_state(&ckpt.model)?;
    model.rl.load_state(&ckpt.model)?;
    Ok(model)
}

/// Training and validation tensors for one stage.
struct Data {
    train_inputs: Vec<Tensor>,
    train_masks: Vec<Tensor>,
    val_inputs: Vec<Tensor>,
    val_masks: Vec<Tensor>,
}

fn load_split(corpus: &Corpus, split: Split, limit: Option<usize>) -> Result<Vec<LoadedSample>> {
    let mut entries: Vec<_> = corpus.manifest.entries(split).collect();
    if let Some(n) = limit {
        entries.truncate(n);
    }
    if entries.is_empty() {
        return Err(TrainError::Config(format!("split {split} is empty")));
    }
    Ok(entries
        .into_iter()
        .map(|e| corpus.load(e))
        .collect::<Result<_, _>>()?)
}

fn open_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let corpus = Corpus::open(&cfg.dataset)?;
    if corpus.manifest.image_size != cfg.image_size {
        return Err(TrainError::Config(format!(
            "dataset {} holds {n}x{n} images but the config expects {m}x{m}",
            cfg.dataset.display(),
            n = corpus.manifest.image_size,
            m = cfg.image_size,
        )));
    }
    Ok(corpus)
}

fn load_data(cfg: &RunConfig, corpus: &Corpus) -> Result<(Vec<LoadedSample>, Vec<LoadedSample>)> {
    let train = load_split(corpus, Split::Train, cfg.max_train_samples)?;
    let val = load_split(corpus, Split::Val, None)?;
    Ok((train, val))
}

/// Mean hard Dice of `graph` over `inputs` after binarizing at `threshold`.
fn mean_hard_dice(
    graph: &mut ModelGraph,
    inputs: &[Tensor],
    masks: &[Tensor],
    threshold: f32,
) -> Result<f64> {
    let mut sum = 0.0;
    for (x, m) in inputs.iter().zip(masks) {
        let p = graph.predict(x, Mode::Eval)?;
        sum += hard_dice(&binarize(&p, threshold), m)?;
    }
    Ok(sum / inputs.len() as f64)
}

fn graph_mut(model: &mut SegmentationModel, stage: Stage) -> &mut ModelGraph {
    match stage {
        Stage::Fcn => &mut model.fcn,
        Stage::Rl => &mut model.rl,
    }
}

fn save_checkpoint(
    path: &Path,
    model: &SegmentationModel,
    adam: &Adam,
    stage: Stage,
    progress: Progress,
) -> Result<()> {
    let graph = match stage {
        Stage::Fcn => &model.fcn,
        Stage::Rl => &model.rl,
    };
    let mut optimizer = adam.state(graph);
    optimizer.push(progress.to_tensor(stage));
    Checkpoint {
        model: model_state(model),
        optimizer,
    }
    .save(path)?;
    Ok(())
}

/// The epoch loop shared by both stages. `check` runs after every epoch.
fn fit(
    cfg: &RunConfig,
    stage: Stage,
    model: &mut SegmentationModel,
    data: &Data,
    resume: bool,
    mut check: impl FnMut(&SegmentationModel, usize) -> Result<()>,
) -> Result<StageOutcome> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let best_path = dir.join(best_checkpoint_file(stage));
    let last_path = dir.join(last_checkpoint_file(stage));
    let log_path = dir.join(log_file(stage));
    let epochs = match stage {
        Stage::Fcn => cfg.epochs_stage1,
        Stage::Rl => cfg.epochs_stage2,
    };

    let mut adam = Adam::new(cfg.adam, graph_mut(model, stage));
    let mut progress = Progress {
        epochs_done: 0,
        best_epoch: 0,
        best_val: f64::NEG_INFINITY,
    };
    let mut logs = Vec::new();
    if resume && last_path.exists() {
        let ckpt = Checkpoint::load(&last_path)?;
        let graph = graph_mut(model, stage);
        graph.load_state(&ckpt.model)?;
        adam.load_state(graph, &ckpt.optimizer)?;
        progress = Progress::from_checkpoint(&ckpt, stage)?;
        logs = read_csv(&log_path)?;
        logs.truncate(progress.epochs_done);
        if logs.len() != progress.epochs_done {
            return Err(TrainError::Checkpoint(format!(
                "{} has {} rows but the checkpoint records {} epochs",
                log_path.display(),
                logs.len(),
                progress.epochs_done
            )));
        }
        log::info!(
            "stage {}: resuming after epoch {}",
            stage_no(stage),
            progress.epochs_done
        );
    }

    let stream = stage_no(stage);
    for epoch in progress.epochs_done + 1..=epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0f64;
        for batch in batch_order(data.train_inputs.len(), cfg.batch_size, epoch_seed(cfg.seed, stream, epoch)) {
            let x = Tensor::stack(&batch.iter().map(|&i| &data.train_inputs[i]).collect::<Vec<_>>())?;
            let y = Tensor::stack(&batch.iter().map(|&i| &data.train_masks[i]).collect::<Vec<_>>())?;
            let graph = graph_mut(model, stage);
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let (pred, binding) = graph.forward(&mut tape, input, Mode::Train)?;
            let loss = tape.dice_loss(pred, &y, DEFAULT_SMOOTH)?;
            loss_sum += tape.value(loss).item()? as f64 * batch.len() as f64;
            tape.backward(loss)?;
            let grads = graph.gradients(&tape, &binding);
            adam.step(graph, &grads)?;
        }
        let train_loss = loss_sum / data.train_inputs.len() as f64;

        let val_dice = if epoch % cfg.eval_every == 0 || epoch == epochs {
            Some(mean_hard_dice(
                graph_mut(model, stage),
                &data.val_inputs,
                &data.val_masks,
                cfg.threshold,
            )?)
        } else {
            None
        };
        check(model, epoch)?;

        progress.epochs_done = epoch;
        if let Some(v) = val_dice {
            if v > progress.best_val {
                progress.best_val = v;
                progress.best_epoch = epoch;
                save_checkpoint(&best_path, model, &adam, stage, progress)?;
            }
        }
        let row = EpochLog {
            epoch,
            train_loss,
            train_dice: 1.0 - train_loss,
            val_dice,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "stage {} epoch {epoch}/{epochs}: loss {:.4} dice {:.4} val {} ({:.2}s)",
            stage_no(stage),
            row.train_loss,
            row.train_dice,
            val_dice.map_or("-".to_string(), |v| format!("{v:.4}")),
            row.seconds
        );
        logs.push(row);
        if epoch % cfg.checkpoint_every == 0 || epoch == epochs {
            save_checkpoint(&last_path, model, &adam, stage, progress)?;
            write_csv(&log_path, &logs)?;
        }
    }
    write_csv(&log_path, &logs)?;

    Ok(StageOutcome {
        stage,
        logs,
        best_epoch: progress.best_epoch,
        best_val: progress.best_val,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
        coarse_val: None,
        fcn_hash: fcn_hash(model),
    })
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(CONFIG_FILE), cfg.to_json()?)?;
    Ok(())
}

/// Trains the FCN on the training split. With `resume`, continues from
/// `stage1_last.ckpt` in the run directory when it exists.
pub fn train_stage1(cfg: &RunConfig, resume: bool) -> Result<StageOutcome> {
    cfg.validate()?;
    let corpus = open_corpus(cfg)?;
    let (train, val) = load_data(cfg, &corpus)?;
    write_config(cfg)?;
    let mut model = SegmentationModel::new(cfg.fcn, cfg.rl, cfg.seed)?;
    let data = Data {
        train_inputs: train.iter().map(|s| s.image.clone()).collect(),
        train_masks: train.into_iter().map(|s| s.mask).collect(),
        val_inputs: val.iter().map(|s| s.image.clone()).collect(),
        val_masks: val.into_iter().map(|s| s.mask).collect(),
    };
    fit(cfg, Stage::Fcn, &mut model, &data, resume, |_, _| Ok(()))
}

/// Trains the refinement block with the FCN restored from `fcn_checkpoint`
/// and frozen. The FCN parameter bytes are hashed after every epoch and any
/// change aborts the stage.
pub fn train_stage2(cfg: &RunConfig, fcn_checkpoint: &Path, resume: bool) -> Result<StageOutcome> {
    cfg.validate()?;
    let corpus = open_corpus(cfg)?;
    let (train, val) = load_data(cfg, &corpus)?;
    write_config(cfg)?;

    let mut model = SegmentationModel::new(cfg.fcn, cfg.rl, cfg.seed)?;
    let ckpt = Checkpoint::load(fcn_checkpoint)?;
    model.fcn.load_state(&ckpt.model).map_err(|e| {
        TrainError::Checkpoint(format!("{}: {e}", fcn_checkpoint.display()))
    })?;
    model.freeze_stage(Stage::Fcn);
    let frozen = fcn_hash(&model);

    // The FCN is frozen and has no batch statistics, so its outputs can be
    // computed once.
    let join = |model: &mut SegmentationModel, samples: &[LoadedSample]| -> Result<Vec<Tensor>> {
        samples
            .iter()
            .map(|s| {
                let coarse = model.fcn.predict(&s.image, Mode::Eval)?;
                Ok(ops::concat_channels(&s.image, &coarse)?)
            })
            .collect()
    };
    let train_inputs = join(&mut model, &train)?;
    let val_inputs = join(&mut model, &val)?;
    let coarse_channel = cfg.fcn.in_channels;
    let coarse_val = {
        let mut sum = 0.0;
        for (x, s) in val_inputs.iter().zip(&val) {
            let coarse = channel(x, coarse_channel)?;
            sum += hard_dice(&binarize(&coarse, cfg.threshold), &s.mask)?;
        }
        sum / val.len() as f64
    };
    let data = Data {
        train_inputs,
        train_masks: train.into_iter().map(|s| s.mask).collect(),
        val_inputs,
        val_masks: val.into_iter().map(|s| s.mask).collect(),
    };

    let mut outcome = fit(cfg, Stage::Rl, &mut model, &data, resume, |m, epoch| {
        let now = fcn_hash(m);
        if now != frozen {
            return Err(TrainError::Freeze(format!(
                "FCN parameters changed during stage 2 epoch {epoch}: {frozen} -> {now}"
            )));
        }
        Ok(())
    })?;
    outcome.coarse_val = Some(coarse_val);
    Ok(outcome)
}

/// Channel `c` of a single-sample tensor as a `1×1×H×W` tensor.
fn channel(x: &Tensor, c: usize) -> Result<Tensor> {
    let s = x.shape();
    let plane = s.h() * s.w();
    let data = x.data()[c * plane..(c + 1) * plane].to_vec();
    Ok(Tensor::from_vec(sigseg_core::Shape::new(1, 1, s.h(), s.w()), data)?)
}
