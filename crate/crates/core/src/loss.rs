//! Soft Dice objective.
//!
//! `DC = (2·Σ p·t + s) / (Σ p + Σ t + s)`: the set-overlap Dice coefficient with
//! the intersection relaxed to an elementwise product so it can be
//! differentiated through a probability map. Reductions run in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing added to numerator and denominator; keeps empty-vs-empty at 1.
pub const DEFAULT_SMOOTH: f64 = 1.0;

struct DiceSums {
    inter: f64,
    pred: f64,
    truth: f64,
}

fn sums(pred: &Tensor, truth: &Tensor) -> Result<DiceSums> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "dice: prediction {} vs truth {}",
            pred.shape(),
            truth.shape()
        )));
    }
    let mut s = DiceSums {
        inter: 0.0,
        pred: 0.0,
        truth: 0.0,
    };
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (p, t) = (p as f64, t as f64);
        s.inter += p * t;
        s.pred += p;
        s.truth += t;
    }
    Ok(s)
}

pub fn soft_dice(pred: &Tensor, truth: &Tensor, smooth: f64) -> Result<f64> {
    let s = sums(pred, truth)?;
    Ok((2.0 * s.inter + smooth) / (s.pred + s.truth + smooth))
}

pub fn dice_loss(pred: &Tensor, truth: &Tensor, smooth: f64) -> Result<f64> {
    Ok(1.0 - soft_dice(pred, truth, smooth)?)
}

/// Set-form Dice `2|A∩B| / (|A| + |B|)` of two masks, each pixel counted as
/// set when its value exceeds 0.5. Two empty masks score 1.
pub fn hard_dice(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "hard dice: prediction {} vs truth {}",
            pred.shape(),
            truth.shape()
        )));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (p, t) = (p > 0.5, t > 0.5);
        inter += (p && t) as usize;
        a += p as usize;
        b += t as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// `∂(1 − DC)/∂p_i = −(2·t_i·D − N) / D²` with `N`, `D` the numerator and
/// denominator of the coefficient.
pub(crate) fn dice_loss_grad(pred: &Tensor, truth: &Tensor, smooth: f64) -> Vec<f32> {
    let s = sums(pred, truth).expect("shapes checked at forward");
    let num = 2.0 * s.inter + smooth;
    let den = s.pred + s.truth + smooth;
    let den2 = den * den;
    truth
        .data()
        .iter()
        .map(|&t| (-(2.0 * t as f64 * den - num) / den2) as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn row(v: &[f32]) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_overlap_is_one() {
        let m = row(&[1.0, 0.0, 1.0, 1.0]);
        assert!((soft_dice(&m, &m, DEFAULT_SMOOTH).unwrap() - 1.0).abs() < 1e-12);
        assert!(dice_loss(&m, &m, DEFAULT_SMOOTH).unwrap().abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_smooth_over_total() {
        let a = row(&[1.0, 1.0, 0.0, 0.0]);
        let b = row(&[0.0, 0.0, 1.0, 1.0]);
        let d = soft_dice(&a, &b, DEFAULT_SMOOTH).unwrap();
        assert!((d - 1.0 / 5.0).abs() < 1e-12);
        assert_eq!(soft_dice(&a, &b, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_half_overlap() {
        let p = row(&[1.0, 1.0, 0.0, 0.0]);
        let t = row(&[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(soft_dice(&p, &t, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(soft_dice(&row(&[1.0]), &row(&[1.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn hard_dice_identities() {
        let a = row(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = row(&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let c = row(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(hard_dice(&a, &a).unwrap(), 1.0);
        assert_eq!(hard_dice(&a, &c).unwrap(), 0.0);
        assert_eq!(hard_dice(&a, &b).unwrap(), 0.5);
        assert_eq!(hard_dice(&b, &a).unwrap(), 0.5);
        let z = row(&[0.0; 8]);
        assert_eq!(hard_dice(&z, &z).unwrap(), 1.0);
        assert_eq!(hard_dice(&z, &a).unwrap(), 0.0);
    }
}
