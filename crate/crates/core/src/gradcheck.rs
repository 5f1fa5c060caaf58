//! Finite-difference verification of every differentiable tape operation.
//!
//! Each case builds a small seeded computation `L = Σ r ⊙ op(inputs)` with a
//! fixed random projection `r`. The analytic gradient comes from
//! [`Tape::backward`]; the numerical one from central differences with step
//! `h = 1e-3`, evaluating only forward passes and reducing in `f64`.
//!
//! The error of element `i` is `|a_i − n_i| / max(|a_i|, |n_i|, floor)` where
//! `floor = 0.1 · max_j |n_j|`. Forward passes run in `f32`, so the central
//! difference of an output carries rounding noise around `1e-4` in absolute
//! terms; the floor measures near-zero entries against the tensor's gradient
//! scale instead of against that noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::DEFAULT_SMOOTH;
use crate::ops::{BatchNormConfig, Mode, RunningStats};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-2;
const FLOOR_FRACTION: f64 = 0.1;

/// Operations covered by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedOp {
    Conv2d,
    Conv2dStrided,
    UpConv2d,
    MaxPool2d,
    BatchNorm,
    ConvRelu,
    Sigmoid,
    Concat,
    DiceLoss,
}

impl CheckedOp {
    pub const ALL: [CheckedOp; 9] = [
        CheckedOp::Conv2d,
        CheckedOp::Conv2dStrided,
        CheckedOp::UpConv2d,
        CheckedOp::MaxPool2d,
        CheckedOp::BatchNorm,
        CheckedOp::ConvRelu,
        CheckedOp::Sigmoid,
        CheckedOp::Concat,
        CheckedOp::DiceLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedOp::Conv2d => "conv2d",
            CheckedOp::Conv2dStrided => "conv2d_stride2",
            CheckedOp::UpConv2d => "upconv2d",
            CheckedOp::MaxPool2d => "max_pool2d",
            CheckedOp::BatchNorm => "batch_norm",
            CheckedOp::ConvRelu => "conv_relu",
            CheckedOp::Sigmoid => "sigmoid",
            CheckedOp::Concat => "concat_channels",
            CheckedOp::DiceLoss => "dice_loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Scales the analytic gradients of this op by 1.05 before comparison;
    /// used to confirm the suite notices a wrong backward pass.
    pub inject_fault: Option<CheckedOp>,
}

#[derive(Debug, Clone)]
pub struct GradcheckRow {
    pub op: CheckedOp,
    pub max_rel_err: f64,
    pub elements: usize,
    pub passed: bool,
}

type BuildFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    inputs: Vec<Tensor>,
    /// Builds the op output on `tape` from the leaf vars of `inputs`.
    build: BuildFn,
    /// `false` when the output is already the scalar loss.
    project: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor {
    Tensor::uniform_with(shape, lo, hi, rng)
}

/// Values spaced at least `gap` apart, in shuffled order, so no max-pool
/// window has a near tie that a finite-difference step could flip.
fn distinct_tensor(rng: &mut ChaCha8Rng, shape: Shape, gap: f32) -> Tensor {
    let n = shape.numel();
    let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * gap - n as f32 * gap / 2.0).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::from_vec(shape, vals).expect("shape matches")
}

fn make_case(op: CheckedOp, rng: &mut ChaCha8Rng) -> Result<Case> {
    let case = match op {
        CheckedOp::Conv2d | CheckedOp::Conv2dStrided => {
            let stride = if op == CheckedOp::Conv2d { 1 } else { 2 };
            Case {
                inputs: vec![
                    rand_tensor(rng, Shape::new(2, 2, 5, 5), -1.0, 1.0),
                    rand_tensor(rng, Shape::new(3, 2, 3, 3), -1.0, 1.0),
                    rand_tensor(rng, Shape::new(3, 1, 1, 1), -1.0, 1.0),
                ],
                build: Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, 1)),
                project: true,
            }
        }
        CheckedOp::UpConv2d => Case {
            inputs: vec![
                rand_tensor(rng, Shape::new(2, 3, 3, 3), -1.0, 1.0),
                rand_tensor(rng, Shape::new(3, 2, 2, 2), -1.0, 1.0),
                rand_tensor(rng, Shape::new(2, 1, 1, 1), -1.0, 1.0),
            ],
            build: Box::new(|t, v| t.upconv2d(v[0], v[1], Some(v[2]), 2)),
            project: true,
        },
        CheckedOp::MaxPool2d => Case {
            inputs: vec![distinct_tensor(rng, Shape::new(2, 2, 4, 4), 0.05)],
            build: Box::new(|t, v| t.max_pool2d(v[0], 2, 2)),
            project: true,
        },
        CheckedOp::BatchNorm => Case {
            inputs: vec![
                rand_tensor(rng, Shape::new(3, 2, 4, 4), -2.0, 2.0),
                rand_tensor(rng, Shape::new(2, 1, 1, 1), 0.5, 1.5),
                rand_tensor(rng, Shape::new(2, 1, 1, 1), -0.5, 0.5),
            ],
            build: Box::new(|t, v| {
                let mut rs = RunningStats::new(2);
                t.batch_norm(v[0], v[1], v[2], BatchNormConfig::default(), Mode::Train, &mut rs)
            }),
            project: true,
        },
        CheckedOp::ConvRelu => {
            // Redraw until every pre-activation clears the step by a margin,
            // keeping the finite differences away from the ReLU kink.
            loop {
                let x = rand_tensor(rng, Shape::new(1, 2, 5, 5), -1.0, 1.0);
                let w = rand_tensor(rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
                let b = rand_tensor(rng, Shape::new(2, 1, 1, 1), -0.5, 0.5);
                let z = crate::ops::conv2d(&x, &w, Some(&b), 1, 1)?;
                if z.data().iter().all(|v| v.abs() > 0.02) {
                    break Case {
                        inputs: vec![x, w, b],
                        build: Box::new(|t, v| {
                            let z = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                            Ok(t.relu(z))
                        }),
                        project: true,
                    };
                }
            }
        }
        CheckedOp::Sigmoid => Case {
            inputs: vec![rand_tensor(rng, Shape::new(1, 2, 4, 4), -3.0, 3.0)],
            build: Box::new(|t, v| Ok(t.sigmoid(v[0]))),
            project: true,
        },
        CheckedOp::Concat => Case {
            inputs: vec![
                rand_tensor(rng, Shape::new(2, 1, 3, 3), -1.0, 1.0),
                rand_tensor(rng, Shape::new(2, 2, 3, 3), -1.0, 1.0),
            ],
            build: Box::new(|t, v| t.concat_channels(v[0], v[1])),
            project: true,
        },
        CheckedOp::DiceLoss => {
            let truth = rand_tensor(rng, Shape::new(1, 1, 5, 5), 0.0, 1.0).map(|v| v.round());
            Case {
                inputs: vec![rand_tensor(rng, Shape::new(1, 1, 5, 5), 0.05, 0.95)],
                build: Box::new(move |t, v| t.dice_loss(v[0], &truth, DEFAULT_SMOOTH)),
                project: false,
            }
        }
    };
    Ok(case)
}

fn loss_value(case: &Case, inputs: &[Tensor], proj: Option<&Tensor>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let y = tape.value(out);
    Ok(match proj {
        Some(r) => y
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum(),
        None => y.data()[0] as f64,
    })
}

fn check_op(op: CheckedOp, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<GradcheckRow> {
    let case = make_case(op, rng)?;

    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect();
    let out = (case.build)(&mut tape, &vars)?;
    let proj = case
        .project
        .then(|| rand_tensor(rng, tape.value(out).shape(), -1.0, 1.0));
    let loss = match &proj {
        Some(r) => tape.weighted_sum(out, r.clone())?,
        None => out,
    };
    tape.backward(loss)?;

    let fault = if opts.inject_fault == Some(op) { 1.05 } else { 1.0 };
    let mut max_rel = 0.0f64;
    let mut elements = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic: Vec<f64> = tape
            .grad(*var)
            .map(|g| g.iter().map(|&v| v as f64 * fault).collect())
            .unwrap_or_else(|| vec![0.0; case.inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..case.inputs[k].numel() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let lp = loss_value(&case, &plus, proj.as_ref())?;
            let lm = loss_value(&case, &minus, proj.as_ref())?;
            // The perturbed coordinates are rounded to f32, so divide by the
            // step actually taken rather than the nominal 2h.
            let taken = plus[k].data()[i] as f64 - minus[k].data()[i] as f64;
            numeric.push((lp - lm) / taken);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (FLOOR_FRACTION * scale).max(f64::MIN_POSITIVE);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            max_rel = max_rel.max(rel);
        }
        elements += analytic.len();
    }
    Ok(GradcheckRow {
        op,
        max_rel_err: max_rel,
        elements,
        passed: max_rel < TOLERANCE,
    })
}

/// Runs the full finite-difference suite.
pub fn run(opts: &GradcheckOptions) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    CheckedOp::ALL
        .into_iter()
        .map(|op| check_op(op, opts, &mut rng))
        .collect()
}
