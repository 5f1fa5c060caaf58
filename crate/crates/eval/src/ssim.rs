//! Mean structural similarity with an 11×11 Gaussian window.

use crate::error::{EvalError, Result};
use crate::plane::Plane;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable weighted average over every full window position.
fn filter_valid(p: &Plane, w: &[f64]) -> Plane {
    let k = w.len();
    let (ow, oh) = (p.width - k + 1, p.height - k + 1);
    let mut rows = vec![0.0; ow * p.height];
    for y in 0..p.height {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| w[i] * p.get(x + i, y)).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| w[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    Plane {
        width: ow,
        height: oh,
        data: out,
    }
}

/// Mean SSIM of two grayscale rasters in `[0, 1]`, clamped to `[0, 1]`.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::Metric(format!(
            "ssim: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(EvalError::Metric(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let w = gaussian_window();
    let mu_a = filter_valid(a, &w);
    let mu_b = filter_valid(b, &w);
    let aa = filter_valid(&a.map(|v| v * v), &w);
    let bb = filter_valid(&b.map(|v| v * v), &w);
    let ab = filter_valid(
        &Plane {
            width: a.width,
            height: a.height,
            data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
        },
        &w,
    );
    let mut total = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        total += num / den;
    }
    Ok((total / mu_a.data.len() as f64).clamp(0.0, 1.0))
}
