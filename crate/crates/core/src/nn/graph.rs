use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};
use crate::ops::{BatchNormConfig, Mode, RunningStats};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

use super::refine::RlConfig;
use super::unet::UNetConfig;

/// Which training stage owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Fcn,
    Rl,
}

impl Stage {
    pub fn prefix(self) -> &'static str {
        match self {
            Stage::Fcn => "fcn",
            Stage::Rl => "rl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, not learnable parameters.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub kind: ParamKind,
    pub stage: Stage,
    /// Declared extents: rank 4 for kernels, rank 1 for per-channel vectors.
    pub dims: Vec<usize>,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Architecture {
    Fcn(UNetConfig),
    Rl(RlConfig),
}

/// An ordered set of named parameters plus the topology that consumes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    arch: Architecture,
    stage: Stage,
    params: IndexMap<String, Param>,
    pub bn: BatchNormConfig,
}

/// Tape leaves created for one forward pass, aligned with the parameter order.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn var(&self, index: usize) -> Option<Var> {
        self.vars[index]
    }
}

pub(crate) struct Builder {
    stage: Stage,
    rng: ChaCha8Rng,
    params: IndexMap<String, Param>,
}

impl Builder {
    pub(crate) fn new(stage: Stage, seed: u64) -> Self {
        Builder {
            stage,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: IndexMap::new(),
        }
    }

    fn insert(&mut self, name: String, kind: ParamKind, dims: Vec<usize>, value: Tensor) {
        let full = format!("{}.{name}", self.stage.prefix());
        self.params.insert(
            full,
            Param {
                kind,
                stage: self.stage,
                dims,
                value,
                trainable: !kind.is_buffer(),
            },
        );
    }

    /// He-uniform kernel with bound `sqrt(6 / fan_in)` and a zero bias.
    pub(crate) fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) {
        let shape = Shape::new(cout, cin, k, k);
        let bound = (6.0 / (cin * k * k) as f32).sqrt();
        let w = Tensor::uniform_with(shape, -bound, bound, &mut self.rng);
        self.insert(format!("{name}.weight"), ParamKind::Weight, vec![cout, cin, k, k], w);
        self.vector(format!("{name}.bias"), ParamKind::Bias, cout, 0.0);
    }

    /// Transposed-convolution kernel `[cin, cout, k, k]`. With `k == stride`
    /// every output pixel sees exactly `cin` inputs, which sets the fan-in.
    pub(crate) fn upconv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let shape = Shape::new(cin, cout, k, k);
        let bound = (6.0 / cin as f32).sqrt();
        let w = Tensor::uniform_with(shape, -bound, bound, &mut self.rng);
        self.insert(format!("{name}.weight"), ParamKind::Weight, vec![cin, cout, k, k], w);
        self.vector(format!("{name}.bias"), ParamKind::Bias, cout, 0.0);
    }

    pub(crate) fn batch_norm(&mut self, name: &str, c: usize) {
        self.vector(format!("{name}.gamma"), ParamKind::Gamma, c, 1.0);
        self.vector(format!("{name}.beta"), ParamKind::Beta, c, 0.0);
        self.vector(format!("{name}.running_mean"), ParamKind::RunningMean, c, 0.0);
        self.vector(format!("{name}.running_var"), ParamKind::RunningVar, c, 1.0);
    }

    fn vector(&mut self, name: String, kind: ParamKind, c: usize, fill: f32) {
        let t = Tensor::full(Shape::new(c, 1, 1, 1), fill);
        self.insert(name, kind, vec![c], t);
    }

    pub(crate) fn finish(self, arch: Architecture) -> ModelGraph {
        ModelGraph {
            arch,
            stage: self.stage,
            params: self.params,
            bn: BatchNormConfig::default(),
        }
    }
}

impl ModelGraph {
    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn param_at_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub(crate) fn index_of(&self, name: &str) -> usize {
        self.params
            .get_index_of(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| !p.kind.is_buffer())
            .map(|p| p.value.numel())
            .sum()
    }

    /// Marks every learnable parameter of `stage` non-trainable. Idempotent.
    pub fn freeze_stage(&mut self, stage: Stage) {
        for p in self.params.values_mut() {
            if p.stage == stage {
                p.trainable = false;
            }
        }
    }

    pub fn unfreeze_stage(&mut self, stage: Stage) {
        for p in self.params.values_mut() {
            if p.stage == stage && !p.kind.is_buffer() {
                p.trainable = true;
            }
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params.values().all(|p| !p.trainable)
    }

    /// Records each learnable parameter as a tape leaf; frozen ones become
    /// constants so no gradient is ever computed for them.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        self.bind_with(tape, true)
    }

    fn bind_with(&self, tape: &mut Tape, track: bool) -> Binding {
        let vars = self
            .params
            .values()
            .map(|p| {
                (!p.kind.is_buffer()).then(|| tape.leaf(p.value.clone(), track && p.trainable))
            })
            .collect();
        Binding { vars }
    }

    pub(crate) fn var(&self, binding: &Binding, name: &str) -> Var {
        binding
            .var(self.index_of(name))
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    /// Gradients for each parameter index, `None` where nothing was computed.
    pub fn gradients(&self, tape: &Tape, binding: &Binding) -> Vec<Option<Vec<f32>>> {
        binding
            .vars
            .iter()
            .map(|v| v.and_then(|v| tape.grad(v).map(<[f32]>::to_vec)))
            .collect()
    }

    pub(crate) fn running_stats(&self, bn_name: &str) -> RunningStats {
        let get = |suffix: &str| {
            self.params[&format!("{bn_name}.{suffix}")]
                .value
                .data()
                .to_vec()
        };
        RunningStats {
            mean: get("running_mean"),
            var: get("running_var"),
        }
    }

    pub(crate) fn store_running_stats(&mut self, bn_name: &str, stats: RunningStats) {
        let mut put = |suffix: &str, v: Vec<f32>| {
            let p = self
                .params
                .get_mut(&format!("{bn_name}.{suffix}"))
                .expect("batch-norm buffers exist");
            p.value.data_mut().copy_from_slice(&v);
        };
        put("running_mean", stats.mean);
        put("running_var", stats.var);
    }

    /// Applies batch normalization `bn_name` on the tape, updating the stored
    /// running statistics in train mode.
    pub(crate) fn apply_bn(
        &mut self,
        tape: &mut Tape,
        binding: &Binding,
        bn_name: &str,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = self.var(binding, &format!("{bn_name}.gamma"));
        let beta = self.var(binding, &format!("{bn_name}.beta"));
        let mut stats = self.running_stats(bn_name);
        let y = tape.batch_norm(x, gamma, beta, self.bn, mode, &mut stats)?;
        self.store_running_stats(bn_name, stats);
        Ok(y)
    }

    /// Runs the graph on `input`, binding parameters onto `tape` first.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<(Var, Binding)> {
        self.forward_with(tape, input, mode, true)
    }

    fn forward_with(
        &mut self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        track: bool,
    ) -> Result<(Var, Binding)> {
        let binding = self.bind_with(tape, track);
        let out = match self.arch {
            Architecture::Fcn(cfg) => super::unet::forward(self, cfg, tape, &binding, input)?,
            Architecture::Rl(cfg) => super::refine::forward(self, cfg, tape, &binding, input, mode)?,
        };
        Ok((out, binding))
    }

    /// Forward pass on a plain tensor without gradient tracking.
    pub fn predict(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (out, _) = self.forward_with(&mut tape, x, mode, false)?;
        Ok(tape.value(out).clone())
    }

    /// Every parameter and buffer as checkpoint tensors, in graph order.
    pub fn state(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|(name, p)| NamedTensor {
                name: name.clone(),
                dims: p.dims.clone(),
                data: p.value.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites parameter values from checkpoint tensors. Every parameter of
    /// this graph must be present with exactly its declared extents.
    pub fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, p) in &self.params {
            let t = lookup
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing from checkpoint")))?;
            if t.dims != p.dims {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has extents {:?}, model expects {:?}",
                    t.dims, p.dims
                )));
            }
        }
        for (name, p) in self.params.iter_mut() {
            p.value.data_mut().copy_from_slice(&lookup[name.as_str()].data);
        }
        Ok(())
    }

    /// Bytes of every parameter value, for bitwise comparisons.
    pub fn parameter_bytes(&self) -> Vec<u8> {
        self.params
            .values()
            .flat_map(|p| p.value.to_le_bytes())
            .collect()
    }
}
