//! Scoring a predictor on a corpus split.

use sigseg_core::loss::hard_dice;
use sigseg_core::nn::{apply_mask, binarize, to_grayscale, SegmentationModel, DEFAULT_BACKGROUND, DEFAULT_THRESHOLD};
use sigseg_core::{Mode, Shape, Tensor};
use sigseg_synthdoc::{Corpus, Split};

use crate::error::Result;
use crate::keypoint::keypoint_match_rate;
use crate::plane::Plane;
use crate::report::{MetricReport, SampleMetrics};
use crate::ssim::ssim;

/// Where predicted masks come from.
pub enum Predictor<'a> {
    /// The full network's refined output.
    Refined(&'a mut SegmentationModel),
    /// The FCN output alone.
    Coarse(&'a mut SegmentationModel),
    /// The ground-truth mask itself; every metric is 1.
    Truth,
    /// An empty mask.
    Background,
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Refined(_) => "fcn_rl",
            Predictor::Coarse(_) => "fcn",
            Predictor::Truth => "truth",
            Predictor::Background => "background",
        }
    }

    /// Binary `1×1×H×W` mask for `image`.
    pub fn predict(&mut self, image: &Tensor, truth: &Tensor, threshold: f32) -> Result<Tensor> {
        Ok(match self {
            Predictor::Refined(m) => binarize(&m.predict(image, Mode::Eval)?.1, threshold),
            Predictor::Coarse(m) => binarize(&m.fcn.predict(image, Mode::Eval)?, threshold),
            Predictor::Truth => truth.clone(),
            Predictor::Background => {
                let s = image.shape();
                Tensor::zeros(Shape::new(1, 1, s.h(), s.w()))
            }
        })
    }
}

/// Grayscale rendering of the pixels `mask` keeps, on white.
pub fn extraction(image: &Tensor, mask: &Tensor) -> Result<Plane> {
    Plane::from_tensor(&to_grayscale(&apply_mask(image, mask, DEFAULT_BACKGROUND)?)?)
}

/// DSC on the masks; SSIM and keypoint rate on the extractions.
pub fn score_sample(id: &str, image: &Tensor, pred: &Tensor, truth: &Tensor) -> Result<SampleMetrics> {
    let (ep, et) = (extraction(image, pred)?, extraction(image, truth)?);
    Ok(SampleMetrics {
        sample_id: id.to_string(),
        dsc: hard_dice(pred, truth)?,
        ssim: ssim(&ep, &et)?,
        sift_rate: keypoint_match_rate(&ep, &et)?,
    })
}

pub fn evaluate_model(predictor: &mut Predictor, corpus: &Corpus, split: Split) -> Result<MetricReport> {
    evaluate_with_threshold(predictor, corpus, split, DEFAULT_THRESHOLD)
}

pub fn evaluate_with_threshold(
    predictor: &mut Predictor,
    corpus: &Corpus,
    split: Split,
    threshold: f32,
) -> Result<MetricReport> {
    let mut samples = Vec::new();
    for entry in corpus.manifest.entries(split) {
        let s = corpus.load(entry)?;
        let pred = predictor.predict(&s.image, &s.mask, threshold)?;
        samples.push(score_sample(&s.id, &s.image, &pred, &s.mask)?);
    }
    MetricReport::new(predictor.name(), samples)
}
