//! U-Net encoder-decoder: the coarse segmentation stage.
//!
//! Contraction: `depth` blocks of two padded 3×3 convolutions with ReLU, then a
//! 2×2/2 max-pool, doubling the channel width per level. A double-conv
//! bottleneck follows. Expansion: `depth` blocks of 2×2/2 transposed
//! convolution, concatenation with the contraction features of the same level
//! (skip first), and two 3×3 convolutions with ReLU. A 1×1 convolution and a
//! sigmoid produce the probability map. Padding keeps the skip features and the
//! upsampled maps the same size, so no cropping is needed.

use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

use super::graph::{Architecture, Binding, Builder, ModelGraph, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of pooling levels.
    pub depth: usize,
    pub out_channels: usize,
}

impl UNetConfig {
    /// 64×64 inputs, three levels, eight base channels.
    pub fn desk() -> Self {
        UNetConfig {
            in_channels: 3,
            base_channels: 8,
            depth: 3,
            out_channels: 1,
        }
    }

    /// 512×512 inputs, four levels, 64 base channels.
    pub fn full() -> Self {
        UNetConfig {
            in_channels: 3,
            base_channels: 64,
            depth: 4,
            out_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 || self.in_channels < 1 || self.out_channels < 1
        {
            return Err(Error::Config(format!(
                "U-Net needs depth, base_channels, in_channels and out_channels >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial extents must survive `depth` halvings exactly.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let unit = 1usize << self.depth;
        if h % unit != 0 || w % unit != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by 2^depth = {unit} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Recovers the configuration from the tensor names and extents of a
    /// checkpoint holding an FCN.
    pub fn infer(tensors: &[NamedTensor]) -> Result<Self> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing from checkpoint")))
        };
        let first = find("fcn.enc0.conv1.weight")?;
        let head = find("fcn.head.weight")?;
        let depth = (0..)
            .take_while(|l| tensors.iter().any(|t| t.name == format!("fcn.enc{l}.conv1.weight")))
            .count();
        if first.dims.len() != 4 || head.dims.len() != 4 {
            return Err(Error::Checkpoint("FCN kernels must have rank 4".into()));
        }
        Ok(UNetConfig {
            in_channels: first.dims[1],
            base_channels: first.dims[0],
            depth,
            out_channels: head.dims[0],
        })
    }
}

/// Builds the FCN with He-uniform weights drawn from `seed`.
pub fn build_fcn(cfg: UNetConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = Builder::new(Stage::Fcn, seed);
    let mut cin = cfg.in_channels;
    for l in 0..cfg.depth {
        let w = cfg.width(l);
        b.conv(&format!("enc{l}.conv1"), w, cin, 3);
        b.conv(&format!("enc{l}.conv2"), w, w, 3);
        cin = w;
    }
    let wb = cfg.width(cfg.depth);
    b.conv("bottleneck.conv1", wb, cin, 3);
    b.conv("bottleneck.conv2", wb, wb, 3);
    for l in (0..cfg.depth).rev() {
        let w = cfg.width(l);
        b.upconv(&format!("dec{l}.up"), cfg.width(l + 1), w, 2);
        b.conv(&format!("dec{l}.conv1"), w, 2 * w, 3);
        b.conv(&format!("dec{l}.conv2"), w, w, 3);
    }
    b.conv("head", cfg.out_channels, cfg.width(0), 1);
    Ok(b.finish(Architecture::Fcn(cfg)))
}

fn conv_relu(
    g: &ModelGraph,
    tape: &mut Tape,
    binding: &Binding,
    name: &str,
    x: Var,
) -> Result<Var> {
    let w = g.var(binding, &format!("fcn.{name}.weight"));
    let b = g.var(binding, &format!("fcn.{name}.bias"));
    let y = tape.conv2d(x, w, Some(b), 1, 1)?;
    Ok(tape.relu(y))
}

pub(crate) fn forward(
    g: &ModelGraph,
    cfg: UNetConfig,
    tape: &mut Tape,
    binding: &Binding,
    input: Var,
) -> Result<Var> {
    let s = tape.value(input).shape();
    cfg.check_input(s.h(), s.w())?;
    if s.c() != cfg.in_channels {
        return Err(Error::Dimension(format!(
            "FCN expects {} input channels, got {}",
            cfg.in_channels,
            s.c()
        )));
    }
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut x = input;
    for l in 0..cfg.depth {
        x = conv_relu(g, tape, binding, &format!("enc{l}.conv1"), x)?;
        x = conv_relu(g, tape, binding, &format!("enc{l}.conv2"), x)?;
        skips.push(x);
        x = tape.max_pool2d(x, 2, 2)?;
    }
    x = conv_relu(g, tape, binding, "bottleneck.conv1", x)?;
    x = conv_relu(g, tape, binding, "bottleneck.conv2", x)?;
    for l in (0..cfg.depth).rev() {
        let w = g.var(binding, &format!("fcn.dec{l}.up.weight"));
        let b = g.var(binding, &format!("fcn.dec{l}.up.bias"));
        let up = tape.upconv2d(x, w, Some(b), 2)?;
        x = tape.concat_channels(skips[l], up)?;
        x = conv_relu(g, tape, binding, &format!("dec{l}.conv1"), x)?;
        x = conv_relu(g, tape, binding, &format!("dec{l}.conv2"), x)?;
    }
    let w = g.var(binding, "fcn.head.weight");
    let b = g.var(binding, "fcn.head.bias");
    let logits = tape.conv2d(x, w, Some(b), 1, 0)?;
    Ok(tape.sigmoid(logits))
}
