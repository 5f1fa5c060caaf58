//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every value produced inside a [`Tape`] is a node addressed by a [`Var`].
//! Nodes are appended in creation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] walks it once, back to front.

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormConfig, BatchNormSaved, Mode, RunningStats};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    UpConv2d,
    MaxPool2d,
    BatchNorm,
    Relu,
    Sigmoid,
    Concat,
    Sum,
    WeightedSum,
    DiceLoss,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    UpConv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved,
    },
    Relu(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
    DiceLoss {
        pred: Var,
        truth: Tensor,
        smooth: f64,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::UpConv2d { .. } => OpKind::UpConv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Concat(..) => OpKind::Concat,
            Op::Sum(_) => OpKind::Sum,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
            Op::DiceLoss { .. } => OpKind::DiceLoss,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            }
            | Op::UpConv2d {
                input, weight, bias, ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::MaxPool2d { input, .. } => vec![*input],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Sum(x) => vec![*x],
            Op::Concat(a, b) => vec![*a, *b],
            Op::WeightedSum { input, .. } => vec![*input],
            Op::DiceLoss { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// A recorded computation together with the gradient buffers of its nodes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        // Ops whose inputs are all constants are stored as leaves: nothing
        // upstream can receive a gradient, so the saved context is dead weight.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Accumulated gradient of the loss with respect to `v`, if any was computed.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    pub fn upconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let out = ops::upconv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            rg,
            Op::UpConv2d {
                input,
                weight,
                bias,
                stride,
            },
        ))
    }

    pub fn max_pool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::max_pool2d(self.value(input), k, stride)?;
        let rg = self.needs(input);
        Ok(self.push(out, rg, Op::MaxPool2d { input, argmax }))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        cfg: BatchNormConfig,
        mode: Mode,
        running: &mut RunningStats,
    ) -> Result<Var> {
        let (out, saved) = ops::batch_norm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            cfg,
            mode,
            running,
        )?;
        let rg = self.needs(input) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.needs(input);
        self.push(out, rg, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        let rg = self.needs(input);
        self.push(out, rg, Op::Sigmoid(input))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, rg, Op::Concat(a, b)))
    }

    /// Sum of all elements as a `1x1x1x1` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        let rg = self.needs(input);
        self.push(out, rg, Op::Sum(input))
    }

    /// `Σ input ⊙ weights` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::dim(format!(
                "weighted_sum weights {} do not match input {}",
                weights.shape(),
                x.shape()
            )));
        }
        let s: f32 = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.needs(input);
        Ok(self.push(Tensor::scalar(s), rg, Op::WeightedSum { input, weights }))
    }

    /// `1 − soft_dice(pred, truth)` over the whole tensor, as a scalar node.
    pub fn dice_loss(&mut self, pred: Var, truth: &Tensor, smooth: f64) -> Result<Var> {
        let dice = crate::loss::soft_dice(self.value(pred), truth, smooth)?;
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar((1.0 - dice) as f32),
            rg,
            Op::DiceLoss {
                pred,
                truth: truth.clone(),
                smooth,
            },
        ))
    }

    /// Back-propagates from a scalar `loss`, adding `∂loss/∂v` into the
    /// gradient buffer of every node that requires a gradient.
    ///
    /// Intermediate gradients are computed afresh on each call, so two calls
    /// without [`Tape::zero_grad`] in between accumulate exactly twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.value(loss).shape() != Shape::scalar() {
            return Err(Error::Contract(format!(
                "backward needs a 1x1x1x1 loss, got {}",
                self.value(loss).shape()
            )));
        }
        let mut scratch: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        scratch[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = scratch[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut scratch)?;
            match &mut self.grads[id] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f32], scratch: &mut [Option<Vec<f32>>]) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |v: &Var| nodes[v.0].requires_grad;
        let mut add = |v: Var, delta: Vec<f32>| match &mut scratch[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        };
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let grads = ops::conv2d_backward(
                    &nodes[input.0].value,
                    &nodes[weight.0].value,
                    g,
                    *stride,
                    *padding,
                    (needs(input), needs(weight), bias.as_ref().is_some_and(needs)),
                )?;
                if let Some(d) = grads.input {
                    add(*input, d);
                }
                if let Some(d) = grads.weight {
                    add(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    add(*b, d);
                }
            }
            Op::UpConv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let grads = ops::upconv2d_backward(
                    &nodes[input.0].value,
                    &nodes[weight.0].value,
                    g,
                    *stride,
                    (needs(input), needs(weight), bias.as_ref().is_some_and(needs)),
                )?;
                if let Some(d) = grads.input {
                    add(*input, d);
                }
                if let Some(d) = grads.weight {
                    add(*weight, d);
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    add(*b, d);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut d = vec![0.0f32; nodes[input.0].value.numel()];
                for (gi, &src) in g.iter().zip(argmax) {
                    d[src as usize] += gi;
                }
                add(*input, d);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let shape = nodes[input.0].value.shape();
                let grads = ops::batch_norm_backward(shape, &nodes[gamma.0].value, saved, g);
                if needs(input) {
                    add(*input, grads.input);
                }
                if needs(gamma) {
                    add(*gamma, grads.gamma);
                }
                if needs(beta) {
                    add(*beta, grads.beta);
                }
            }
            Op::Relu(x) => {
                let d = nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                add(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = nodes[id]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| gi * s * (1.0 - s))
                    .collect();
                add(*x, d);
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (per_a, per_b) = (sa.c() * sa.plane(), sb.c() * sb.plane());
                let mut da = Vec::with_capacity(sa.numel());
                let mut db = Vec::with_capacity(sb.numel());
                for n in 0..sa.n() {
                    let base = n * (per_a + per_b);
                    da.extend_from_slice(&g[base..base + per_a]);
                    db.extend_from_slice(&g[base + per_a..base + per_a + per_b]);
                }
                if needs(a) {
                    add(*a, da);
                }
                if needs(b) {
                    add(*b, db);
                }
            }
            Op::Sum(x) => {
                add(*x, vec![g[0]; nodes[x.0].value.numel()]);
            }
            Op::WeightedSum { input, weights } => {
                add(*input, weights.data().iter().map(|w| w * g[0]).collect());
            }
            Op::DiceLoss {
                pred,
                truth,
                smooth,
            } => {
                let d = crate::loss::dice_loss_grad(&nodes[pred.0].value, truth, *smooth)
                    .into_iter()
                    .map(|v| v * g[0])
                    .collect();
                add(*pred, d);
            }
        }
        Ok(())
    }
}
