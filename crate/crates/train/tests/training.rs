use std::collections::HashMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use sigseg_core::loss::hard_dice;
use sigseg_core::nn::{binarize, SegmentationModel, UNetConfig, DEFAULT_THRESHOLD};
use sigseg_core::{Checkpoint, Mode};
use sigseg_synthdoc::{build_dataset_with_threads, Corpus, GenConfig, Split};
use sigseg_train::loader::batch_order;
use sigseg_train::log::read_csv;
use sigseg_train::stage::fcn_hash;
use sigseg_train::{load_model, split_loader, train, train_stage1, train_stage2, RunConfig, Stages, TrainError};

fn corpus(dir: &Path, n: usize) {
    build_dataset_with_threads(&GenConfig::new(17, n, 32), dir, 1).unwrap();
}

fn small_config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        dataset: data.to_path_buf(),
        out_dir: out.to_path_buf(),
        image_size: 32,
        epochs_stage1: 3,
        epochs_stage2: 2,
        checkpoint_every: 1,
        ..RunConfig::desk()
    }
}

#[test]
fn loader_batch_counts() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 20);
    let c = Corpus::open(dir.path()).unwrap();
    let sizes: Vec<usize> = split_loader(&c.manifest, Split::Train, 4, 3).unwrap().map(|b| b.len()).collect();
    assert_eq!(sizes, vec![4, 4, 4, 4]);
    let sizes: Vec<usize> = split_loader(&c.manifest, Split::Val, 2, 3).unwrap().map(|b| b.len()).collect();
    assert_eq!(sizes, vec![2, 1]);

    let b = batch_order(17, 4, 0);
    assert_eq!(b.len(), 5);
    assert_eq!(b[4].len(), 1);
    assert!(split_loader(&c.manifest, Split::Train, 0, 3).is_err());
}

proptest! {
    #[test]
    fn every_sample_is_visited_once_per_epoch(len in 1usize..60, batch in 1usize..9, seed in any::<u64>()) {
        let order = batch_order(len, batch, seed);
        prop_assert_eq!(order.len(), len.div_ceil(batch));
        let mut seen: Vec<usize> = order.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..len).collect::<Vec<_>>());
    }
}

#[test]
fn visited_ids_equal_split_ids() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 20);
    let c = Corpus::open(dir.path()).unwrap();
    let mut want: Vec<&str> = c.manifest.entries(Split::Train).map(|e| e.id.as_str()).collect();
    want.sort_unstable();
    for seed in 0..5 {
        let mut got: Vec<&str> = split_loader(&c.manifest, Split::Train, 3, seed)
            .unwrap()
            .flatten()
            .map(|e| e.id.as_str())
            .collect();
        got.sort_unstable();
        assert_eq!(got, want);
    }
}

#[test]
fn empty_split_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    // Four samples split 3 / 0 / 1: no validation data.
    corpus(dir.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let err = train_stage1(&small_config(dir.path(), out.path()), false).unwrap_err();
    assert!(matches!(err, TrainError::Config(ref m) if m.contains("val")), "{err}");
    let c = Corpus::open(dir.path()).unwrap();
    assert!(split_loader(&c.manifest, Split::Val, 4, 0).is_err());
}

#[test]
fn untrained_network_scores_below_half() {
    let dir = tempfile::tempdir().unwrap();
    build_dataset_with_threads(&GenConfig::new(3, 40, 64), dir.path(), 1).unwrap();
    let c = Corpus::open(dir.path()).unwrap();
    let cfg = RunConfig::desk();
    for seed in 0..3 {
        let mut model = SegmentationModel::new(cfg.fcn, cfg.rl, seed).unwrap();
        let val = c.load_split(Split::Val).unwrap();
        let mean = val
            .iter()
            .map(|s| hard_dice(&binarize(&model.fcn.predict(&s.image, Mode::Eval).unwrap(), DEFAULT_THRESHOLD), &s.mask).unwrap())
            .sum::<f64>()
            / val.len() as f64;
        assert!(mean < 0.5, "seed {seed}: {mean}");
    }
}

fn run_both(data: &Path, out: &Path) -> Vec<sigseg_train::StageOutcome> {
    train(&small_config(data, out), Stages::Both, false).unwrap()
}

fn files(dir: &Path) -> HashMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_both(data.path(), a.path());
    let rb = run_both(data.path(), b.path());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.logs.len(), y.logs.len());
        for (l, m) in x.logs.iter().zip(&y.logs) {
            assert!(l.same_metrics(m), "{l:?} vs {m:?}");
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);

    let c = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: 1,
        ..small_config(data.path(), c.path())
    };
    train(&cfg, Stages::One, false).unwrap();
    assert_ne!(files(c.path())["stage1_last.ckpt"], fa["stage1_last.ckpt"]);
}

#[test]
fn logs_are_well_formed() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let out = tempfile::tempdir().unwrap();
    let outcomes = run_both(data.path(), out.path());
    for o in &outcomes {
        let text = fs::read_to_string(&o.log_path).unwrap();
        assert!(text.starts_with("epoch,train_loss,train_dice,val_dice,seconds\n"));
        let rows = read_csv(&o.log_path).unwrap();
        assert_eq!(rows.len(), o.logs.len());
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert!((r.train_dice - (1.0 - r.train_loss)).abs() < 1e-6);
            assert!(r.val_dice.is_some());
        }
        let best = rows.iter().map(|r| r.val_dice.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(o.best_val, best);
        assert_eq!(rows[o.best_epoch - 1].val_dice, Some(best));
    }
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(out.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg, small_config(data.path(), out.path()));
}

#[test]
fn stage_two_leaves_the_fcn_untouched() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let out = tempfile::tempdir().unwrap();
    let outcomes = run_both(data.path(), out.path());
    let (s1, s2) = (&outcomes[0], &outcomes[1]);
    let stage1 = load_model(&s1.best_checkpoint).unwrap();
    assert_eq!(fcn_hash(&stage1), s2.fcn_hash);
    for path in [&s2.best_checkpoint, &s2.last_checkpoint] {
        let m = load_model(path).unwrap();
        assert_eq!(m.fcn.parameter_bytes(), stage1.fcn.parameter_bytes());
        assert_ne!(m.rl.parameter_bytes(), stage1.rl.parameter_bytes());
    }
    assert!(s2.coarse_val.is_some());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let full = tempfile::tempdir().unwrap();
    let cfg_full = RunConfig {
        epochs_stage1: 4,
        ..small_config(data.path(), full.path())
    };
    train_stage1(&cfg_full, false).unwrap();

    let split = tempfile::tempdir().unwrap();
    let cfg_short = RunConfig {
        epochs_stage1: 2,
        ..small_config(data.path(), split.path())
    };
    train_stage1(&cfg_short, false).unwrap();
    let resumed = train_stage1(
        &RunConfig {
            out_dir: split.path().to_path_buf(),
            ..cfg_full.clone()
        },
        true,
    )
    .unwrap();
    assert_eq!(resumed.logs.len(), 4);
    let (a, b) = (files(full.path()), files(split.path()));
    assert_eq!(a["stage1_last.ckpt"], b["stage1_last.ckpt"]);
    assert_eq!(a["stage1_best.ckpt"], b["stage1_best.ckpt"]);
    let la = read_csv(&full.path().join("stage1.csv")).unwrap();
    let lb = read_csv(&split.path().join("stage1.csv")).unwrap();
    assert!(la.iter().zip(&lb).all(|(x, y)| x.same_metrics(y)));

    // Resuming a finished stage trains nothing further.
    let again = train_stage1(&cfg_full, true).unwrap();
    assert_eq!(again.logs.len(), 4);
    assert_eq!(files(full.path())["stage1_last.ckpt"], a["stage1_last.ckpt"]);
}

#[test]
fn stage_two_rejects_a_mismatched_checkpoint() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let out = tempfile::tempdir().unwrap();
    let other = SegmentationModel::new(
        UNetConfig {
            base_channels: 4,
            ..UNetConfig::desk()
        },
        RunConfig::desk().rl,
        0,
    )
    .unwrap();
    let path = out.path().join("other.ckpt");
    Checkpoint {
        model: other.fcn.state(),
        optimizer: vec![],
    }
    .save(&path)
    .unwrap();
    let err = train_stage2(&small_config(data.path(), out.path()), &path, false).unwrap_err();
    assert!(matches!(err, TrainError::Checkpoint(ref m) if m.contains("fcn.enc0.conv1.weight")), "{err}");

    let missing = train(&small_config(data.path(), out.path()), Stages::Two, false).unwrap_err();
    assert!(missing.is_validation());
}

#[test]
fn image_size_must_match_the_dataset() {
    let data = tempfile::tempdir().unwrap();
    corpus(data.path(), 20);
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        image_size: 64,
        ..small_config(data.path(), out.path())
    };
    assert!(matches!(train_stage1(&cfg, false), Err(TrainError::Config(_))));
}
