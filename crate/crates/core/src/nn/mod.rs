//! The two-stage FCN+RL segmentation network.

mod graph;
pub mod refine;
pub mod unet;

pub use graph::{Architecture, Binding, ModelGraph, Param, ParamKind, Stage};
pub use refine::{build_rl, RlConfig};
pub use unet::{build_fcn, UNetConfig};

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Default binarization threshold; a pixel is foreground iff `p > 0.5`.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// White, the value written where the mask rejects a pixel.
pub const DEFAULT_BACKGROUND: f32 = 1.0;

/// The coarse FCN stage followed by the refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationModel {
    pub fcn: ModelGraph,
    pub rl: ModelGraph,
}

/// Tape handles produced by [`SegmentationModel::forward`].
pub struct FullForward {
    pub coarse: Var,
    pub refined: Var,
    pub fcn_binding: Binding,
    pub rl_binding: Binding,
}

impl SegmentationModel {
    pub fn new(fcn_cfg: UNetConfig, rl_cfg: RlConfig, seed: u64) -> Result<Self> {
        if rl_cfg.in_channels != fcn_cfg.in_channels + fcn_cfg.out_channels {
            return Err(Error::Config(format!(
                "refinement input channels {} must equal image channels {} + mask channels {}",
                rl_cfg.in_channels, fcn_cfg.in_channels, fcn_cfg.out_channels
            )));
        }
        Ok(SegmentationModel {
            fcn: build_fcn(fcn_cfg, seed)?,
            rl: build_rl(rl_cfg, seed.wrapping_add(1))?,
        })
    }

    pub fn freeze_stage(&mut self, stage: Stage) {
        self.fcn.freeze_stage(stage);
        self.rl.freeze_stage(stage);
    }

    /// `coarse = FCN(image)`, `refined = RL(concat(image, coarse))`.
    pub fn forward(&mut self, tape: &mut Tape, image: Var, mode: Mode) -> Result<FullForward> {
        let (coarse, fcn_binding) = self.fcn.forward(tape, image, mode)?;
        let joined = tape.concat_channels(image, coarse)?;
        let (refined, rl_binding) = self.rl.forward(tape, joined, mode)?;
        Ok(FullForward {
            coarse,
            refined,
            fcn_binding,
            rl_binding,
        })
    }

    /// Inference without gradient tracking; returns `(coarse, refined)`.
    pub fn predict(&mut self, image: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let coarse = self.fcn.predict(image, mode)?;
        let joined = crate::ops::concat_channels(image, &coarse)?;
        let refined = self.rl.predict(&joined, mode)?;
        Ok((coarse, refined))
    }
}

/// `1` where `prob > threshold`, else `0`.
pub fn binarize(prob: &Tensor, threshold: f32) -> Tensor {
    prob.map(|p| if p > threshold { 1.0 } else { 0.0 })
}

/// Keeps image pixels where the mask is set and writes `background` elsewhere.
pub fn apply_mask(image: &Tensor, mask: &Tensor, background: f32) -> Result<Tensor> {
    let (si, sm) = (image.shape(), mask.shape());
    if sm.c() != 1 || si.n() != sm.n() || si.h() != sm.h() || si.w() != sm.w() {
        return Err(Error::Dimension(format!(
            "apply_mask: image {si} needs a {}x1x{}x{} mask, got {sm}",
            si.n(),
            si.h(),
            si.w()
        )));
    }
    let plane = si.plane();
    let mut out = image.clone();
    let data = out.data_mut();
    for n in 0..si.n() {
        let m = &mask.data()[n * plane..(n + 1) * plane];
        for c in 0..si.c() {
            let off = (n * si.c() + c) * plane;
            for (v, &keep) in data[off..off + plane].iter_mut().zip(m) {
                if keep <= 0.5 {
                    *v = background;
                }
            }
        }
    }
    Ok(out)
}

/// Luma rendering (`0.299 R + 0.587 G + 0.114 B`) of a 3-channel tensor.
pub fn to_grayscale(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.c() != 3 {
        return Err(Error::Dimension(format!("grayscale needs 3 channels, got {s}")));
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.n() * plane);
    for n in 0..s.n() {
        let base = n * 3 * plane;
        let d = image.data();
        for i in 0..plane {
            out.push(0.299 * d[base + i] + 0.587 * d[base + plane + i] + 0.114 * d[base + 2 * plane + i]);
        }
    }
    Tensor::from_vec(Shape::new(s.n(), 1, s.h(), s.w()), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_threshold_is_strict() {
        let p = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.5, 0.5001, 0.0, 1.0]).unwrap();
        assert_eq!(binarize(&p, DEFAULT_THRESHOLD).data(), &[0.0, 1.0, 0.0, 1.0]);
        let z = Tensor::zeros(Shape::new(1, 1, 3, 3));
        assert_eq!(binarize(&z, DEFAULT_THRESHOLD), z);
    }

    #[test]
    fn apply_mask_extremes() {
        let img = Tensor::uniform(Shape::new(1, 3, 4, 4), 0.0, 1.0, 8);
        let ones = Tensor::ones(Shape::new(1, 1, 4, 4));
        let zeros = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert_eq!(apply_mask(&img, &ones, 1.0).unwrap(), img);
        assert!(apply_mask(&img, &zeros, 1.0).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(apply_mask(&img, &Tensor::ones(Shape::new(1, 1, 4, 3)), 1.0).is_err());
    }

    #[test]
    fn rl_channel_count_must_match() {
        let rl = RlConfig {
            in_channels: 3,
            ..RlConfig::standard()
        };
        assert!(SegmentationModel::new(UNetConfig::desk(), rl, 0).is_err());
    }
}
