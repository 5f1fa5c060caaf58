use sigseg_core::nn::{
    build_fcn, build_rl, ParamKind, RlConfig, SegmentationModel, Stage, UNetConfig,
};
use sigseg_core::{Adam, AdamConfig, Checkpoint, Mode, Shape, Tape, Tensor};

fn small_model(seed: u64) -> SegmentationModel {
    let fcn = UNetConfig {
        in_channels: 3,
        base_channels: 4,
        depth: 2,
        out_channels: 1,
    };
    let rl = RlConfig {
        in_channels: 4,
        hidden_channels: 8,
        layers: 4,
    };
    SegmentationModel::new(fcn, rl, seed).unwrap()
}

fn sample_batch() -> (Tensor, Tensor) {
    let img = Tensor::uniform(Shape::new(2, 3, 16, 16), 0.0, 1.0, 21);
    let truth = Tensor::uniform(Shape::new(2, 1, 16, 16), 0.0, 1.0, 22).map(|v| (v > 0.7) as u8 as f32);
    (img, truth)
}

fn checkpoint_of(model: &SegmentationModel, fcn_opt: &Adam, rl_opt: &Adam) -> Checkpoint {
    let mut c = Checkpoint::default();
    c.model.extend(model.fcn.state());
    c.model.extend(model.rl.state());
    c.optimizer.extend(fcn_opt.state(&model.fcn));
    c.optimizer.extend(rl_opt.state(&model.rl));
    c
}

/// One training step on the refined output; returns the loss.
fn step(model: &mut SegmentationModel, fcn_opt: &mut Adam, rl_opt: &mut Adam, img: &Tensor, truth: &Tensor) -> f32 {
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let out = model.forward(&mut tape, x, Mode::Train).unwrap();
    let loss = tape.dice_loss(out.refined, truth, 1.0).unwrap();
    let value = tape.value(loss).item().unwrap();
    tape.backward(loss).unwrap();
    let g_fcn = model.fcn.gradients(&tape, &out.fcn_binding);
    let g_rl = model.rl.gradients(&tape, &out.rl_binding);
    fcn_opt.step(&mut model.fcn, &g_fcn).unwrap();
    rl_opt.step(&mut model.rl, &g_rl).unwrap();
    value
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut model = small_model(5);
    let mut fo = Adam::new(AdamConfig::default(), &model.fcn);
    let mut ro = Adam::new(AdamConfig::default(), &model.rl);
    let (img, truth) = sample_batch();
    step(&mut model, &mut fo, &mut ro, &img, &truth);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    checkpoint_of(&model, &fo, &ro).save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();

    let loaded = Checkpoint::load(&path).unwrap();
    let mut restored = small_model(999);
    restored.fcn.load_state(&loaded.model).unwrap();
    restored.rl.load_state(&loaded.model).unwrap();
    let mut fo2 = Adam::new(AdamConfig::default(), &restored.fcn);
    let mut ro2 = Adam::new(AdamConfig::default(), &restored.rl);
    fo2.load_state(&restored.fcn, &loaded.optimizer).unwrap();
    ro2.load_state(&restored.rl, &loaded.optimizer).unwrap();
    assert_eq!(fo2, fo);
    assert_eq!(ro2, ro);

    let path2 = dir.path().join("b.ckpt");
    checkpoint_of(&restored, &fo2, &ro2).save(&path2).unwrap();
    assert_eq!(first, std::fs::read(&path2).unwrap());

    let probe = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, 44);
    let (c1, r1) = model.predict(&probe, Mode::Eval).unwrap();
    let (c2, r2) = restored.predict(&probe, Mode::Eval).unwrap();
    assert_eq!(c1.to_le_bytes(), c2.to_le_bytes());
    assert_eq!(r1.to_le_bytes(), r2.to_le_bytes());

    // Training continues identically from the restored state.
    let a = step(&mut model, &mut fo, &mut ro, &img, &truth);
    let b = step(&mut restored, &mut fo2, &mut ro2, &img, &truth);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(model.rl.parameter_bytes(), restored.rl.parameter_bytes());
}

#[test]
fn load_rejects_mismatched_config_naming_the_tensor() {
    let model = small_model(1);
    let mut other = build_fcn(
        UNetConfig {
            in_channels: 3,
            base_channels: 8,
            depth: 2,
            out_channels: 1,
        },
        0,
    )
    .unwrap();
    let err = other.load_state(&model.fcn.state()).unwrap_err().to_string();
    assert!(err.contains("fcn.enc0.conv1.weight"), "{err}");

    let mut partial = model.fcn.state();
    partial.retain(|t| t.name != "fcn.head.bias");
    let mut fresh = small_model(2);
    let err = fresh.fcn.load_state(&partial).unwrap_err().to_string();
    assert!(err.contains("fcn.head.bias"), "{err}");
}

#[test]
fn frozen_fcn_is_bitwise_unchanged_while_rl_trains() {
    let mut model = small_model(9);
    model.freeze_stage(Stage::Fcn);
    model.freeze_stage(Stage::Fcn);
    assert!(model.fcn.is_frozen());
    assert!(model.rl.params().all(|(_, p)| p.trainable || p.kind.is_buffer()));
    let mut fo = Adam::new(AdamConfig::default(), &model.fcn);
    let mut ro = Adam::new(AdamConfig::default(), &model.rl);
    let (img, truth) = sample_batch();
    let probe = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, 8);
    let coarse_before = model.fcn.predict(&probe, Mode::Eval).unwrap();
    let fcn_before = model.fcn.parameter_bytes();
    let rl_before = model.rl.parameter_bytes();
    for _ in 0..3 {
        step(&mut model, &mut fo, &mut ro, &img, &truth);
        assert_eq!(model.fcn.parameter_bytes(), fcn_before);
        let coarse = model.fcn.predict(&probe, Mode::Eval).unwrap();
        assert_eq!(coarse.to_le_bytes(), coarse_before.to_le_bytes());
    }
    assert_ne!(model.rl.parameter_bytes(), rl_before);
    let conv0 = &model.rl.param("rl.conv0.weight").unwrap().value;
    assert_eq!(conv0.shape(), Shape::new(8, 4, 3, 3));
}

#[test]
fn zero_rl_weights_give_half_everywhere() {
    let mut model = small_model(3);
    let names: Vec<String> = model
        .rl
        .params()
        .filter(|(_, p)| matches!(p.kind, ParamKind::Weight | ParamKind::Bias))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        model.rl.param_mut(&n).unwrap().value.data_mut().fill(0.0);
    }
    let img = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, 1);
    let (coarse, refined) = model.predict(&img, Mode::Eval).unwrap();
    assert!(refined.data().iter().all(|&v| v == 0.5));
    // The coarse map does not depend on whether RL runs afterwards.
    let alone = model.fcn.predict(&img, Mode::Eval).unwrap();
    assert_eq!(alone.to_le_bytes(), coarse.to_le_bytes());
    assert_eq!(coarse.shape(), refined.shape());
}

#[test]
fn standard_rl_block_has_four_convs_three_norms() {
    let rl = build_rl(RlConfig::standard(), 0).unwrap();
    let convs = rl.params().filter(|(n, p)| p.kind == ParamKind::Weight && n.contains("conv")).count();
    let norms = rl.params().filter(|(_, p)| p.kind == ParamKind::Gamma).count();
    assert_eq!((convs, norms), (4, 3));
}

/// Overfitting one sample at lr 1e-3: the loss may rise on at most five of
/// fifty steps.
#[test]
fn loss_mostly_decreases_when_overfitting() {
    let mut fcn = build_fcn(UNetConfig::desk(), 17).unwrap();
    let cfg = AdamConfig {
        lr: 1e-3,
        ..Default::default()
    };
    let mut opt = Adam::new(cfg, &fcn);
    let img = Tensor::uniform(Shape::new(1, 3, 64, 64), 0.0, 1.0, 2);
    let mut truth = Tensor::zeros(Shape::new(1, 1, 64, 64));
    for y in 20..40 {
        for x in 10..50 {
            let o = truth.offset(0, 0, y, x);
            truth.data_mut()[o] = 1.0;
        }
    }
    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let (y, binding) = fcn.forward(&mut tape, x, Mode::Train).unwrap();
        let l = tape.dice_loss(y, &truth, 1.0).unwrap();
        losses.push(tape.value(l).item().unwrap());
        tape.backward(l).unwrap();
        let g = fcn.gradients(&tape, &binding);
        opt.step(&mut fcn, &g).unwrap();
    }
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 5, "{rises} rises: {losses:?}");
    assert!(losses[49] < losses[0]);
}
