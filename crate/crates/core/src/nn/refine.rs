//! Refinement layers: a pooling-free stack of padded 3×3 convolutions that
//! polishes the coarse mask given the image it came from.
//!
//! Layers `0..layers-1` are `conv → ReLU → batch-norm`; the last layer maps to a
//! single channel followed by a sigmoid.

use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tape::{Tape, Var};

use super::graph::{Architecture, Binding, Builder, ModelGraph, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Image channels plus one channel for the coarse probability map.
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub layers: usize,
}

impl RlConfig {
    pub fn standard() -> Self {
        RlConfig {
            in_channels: 4,
            hidden_channels: 64,
            layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 || self.hidden_channels < 1 || self.in_channels < 1 {
            return Err(Error::Config(format!(
                "refinement block needs >= 2 layers and >= 1 channel: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn infer(tensors: &[NamedTensor]) -> Result<Self> {
        let first = tensors
            .iter()
            .find(|t| t.name == "rl.conv0.weight")
            .ok_or_else(|| Error::Checkpoint("tensor rl.conv0.weight missing from checkpoint".into()))?;
        let layers = (0..)
            .take_while(|i| tensors.iter().any(|t| t.name == format!("rl.conv{i}.weight")))
            .count();
        if first.dims.len() != 4 {
            return Err(Error::Checkpoint("rl.conv0.weight must have rank 4".into()));
        }
        Ok(RlConfig {
            in_channels: first.dims[1],
            hidden_channels: first.dims[0],
            layers,
        })
    }
}

pub fn build_rl(cfg: RlConfig, seed: u64) -> Result<ModelGraph> {
    cfg.validate()?;
    let mut b = Builder::new(Stage::Rl, seed);
    let mut cin = cfg.in_channels;
    for i in 0..cfg.layers - 1 {
        b.conv(&format!("conv{i}"), cfg.hidden_channels, cin, 3);
        b.batch_norm(&format!("bn{i}"), cfg.hidden_channels);
        cin = cfg.hidden_channels;
    }
    b.conv(&format!("conv{}", cfg.layers - 1), 1, cin, 3);
    Ok(b.finish(Architecture::Rl(cfg)))
}

pub(crate) fn forward(
    g: &mut ModelGraph,
    cfg: RlConfig,
    tape: &mut Tape,
    binding: &Binding,
    input: Var,
    mode: Mode,
) -> Result<Var> {
    let c = tape.value(input).shape().c();
    if c != cfg.in_channels {
        return Err(Error::Dimension(format!(
            "refinement block expects {} input channels, got {c}",
            cfg.in_channels
        )));
    }
    let mut x = input;
    for i in 0..cfg.layers {
        let w = g.var(binding, &format!("rl.conv{i}.weight"));
        let b = g.var(binding, &format!("rl.conv{i}.bias"));
        x = tape.conv2d(x, w, Some(b), 1, 1)?;
        if i + 1 < cfg.layers {
            x = tape.relu(x);
            x = g.apply_bn(tape, binding, &format!("rl.bn{i}"), x, mode)?;
        }
    }
    Ok(tape.sigmoid(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn standard_block_has_four_convs_and_three_norms() {
        let g = build_rl(RlConfig::standard(), 0).unwrap();
        let convs = g
            .params()
            .filter(|(n, p)| p.kind == ParamKind::Weight && n.contains(".conv"))
            .count();
        let norms = g.params().filter(|(_, p)| p.kind == ParamKind::Gamma).count();
        assert_eq!((convs, norms), (4, 3));
        for (name, p) in g.params().filter(|(_, p)| p.kind == ParamKind::Weight) {
            assert_eq!(&p.dims[2..], &[3, 3], "{name}");
        }
    }

    #[test]
    fn forward_preserves_extents() {
        let mut g = build_rl(RlConfig::standard(), 1).unwrap();
        let x = Tensor::uniform(Shape::new(1, 4, 64, 64), 0.0, 1.0, 2);
        let y = g.predict(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 64, 64));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut g = build_rl(RlConfig::standard(), 1).unwrap();
        let names: Vec<String> = g
            .params()
            .filter(|(_, p)| matches!(p.kind, ParamKind::Weight | ParamKind::Bias))
            .map(|(n, _)| n.to_string())
            .collect();
        for n in names {
            g.param_mut(&n).unwrap().value.data_mut().fill(0.0);
        }
        let x = Tensor::uniform(Shape::new(2, 4, 16, 16), -3.0, 3.0, 2);
        for mode in [Mode::Train, Mode::Eval] {
            let y = g.predict(&x, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut g = build_rl(RlConfig::standard(), 1).unwrap();
        let x = Tensor::zeros(Shape::new(1, 3, 8, 8));
        assert!(g.predict(&x, Mode::Eval).is_err());
    }
}
