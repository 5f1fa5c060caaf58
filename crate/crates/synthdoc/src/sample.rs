//! Composition of a signature onto a background and the projective
//! distortion applied to whole samples.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::background::Style;
use crate::error::{Result, SynthError};
use crate::raster::{sample_rgb, Gray, Rgb};
use crate::signature::BBox;

/// Ranges the generator draws distortions from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortRanges {
    pub max_rotation_deg: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    /// Corner displacement bound as a fraction of the side length.
    pub max_corner_jitter: f32,
}

impl Default for DistortRanges {
    fn default() -> Self {
        DistortRanges {
            max_rotation_deg: 15.0,
            min_scale: 0.8,
            max_scale: 1.25,
            max_corner_jitter: 0.08,
        }
    }
}

/// One projective transform: rotation and scale about the image center,
/// then per-corner displacements (TL, TR, BR, BL) in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortParams {
    pub rotation_deg: f32,
    pub scale: f32,
    pub corner_offsets: [[f32; 2]; 4],
}

impl DistortParams {
    pub fn identity() -> Self {
        DistortParams {
            rotation_deg: 0.0,
            scale: 1.0,
            corner_offsets: [[0.0; 2]; 4],
        }
    }

    pub fn sample(rng: &mut ChaCha8Rng, ranges: &DistortRanges, width: usize, height: usize) -> Self {
        let r = ranges.max_rotation_deg;
        let j = ranges.max_corner_jitter;
        let mut corner_offsets = [[0.0; 2]; 4];
        for c in corner_offsets.iter_mut() {
            *c = [
                rng.gen_range(-j..=j) * width as f32,
                rng.gen_range(-j..=j) * height as f32,
            ];
        }
        DistortParams {
            rotation_deg: rng.gen_range(-r..=r),
            scale: rng.gen_range(ranges.min_scale..=ranges.max_scale),
            corner_offsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub signature_seed: u64,
    pub attempt: u64,
    pub background_id: usize,
    pub background_style: Style,
    pub pen_color: [u8; 3],
    pub stroke_width: f32,
    pub strokes: usize,
    pub distortion: Option<DistortParams>,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: Rgb,
    pub mask: Gray,
    pub meta: SampleMeta,
}

/// `out = (1 − a) · background + a · pen` with `a` the ink coverage.
pub fn compose(coverage: &Gray, background: &Rgb, pen: [f32; 3]) -> Result<Rgb> {
    if coverage.width != background.width || coverage.height != background.height {
        return Err(SynthError::Config(format!(
            "signature {}x{} does not match background {}x{}",
            coverage.width, coverage.height, background.width, background.height
        )));
    }
    let mut out = background.clone();
    for (px, &a) in out.data.iter_mut().zip(&coverage.data) {
        for c in 0..3 {
            px[c] = (1.0 - a) * px[c] + a * pen[c];
        }
    }
    Ok(out)
}

/// Solves the 8×8 system for the homography taking each `from[i]` to `to[i]`.
fn homography(from: [[f64; 2]; 4], to: [[f64; 2]; 4]) -> Result<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let ([x, y], [u, v]) = (from[i], to[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(SynthError::Config("degenerate distortion corners".into()));
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Ok(h)
}

/// Applies `params` to the image (bilinear, edge-clamped) and the mask
/// (nearest neighbour, zero outside the frame).
pub fn distort(image: &Rgb, mask: &Gray, params: &DistortParams) -> Result<(Rgb, Gray)> {
    if *params == DistortParams::identity() {
        return Ok((image.clone(), mask.clone()));
    }
    let (w, h) = (image.width as f64, image.height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (sin, cos) = (params.rotation_deg as f64).to_radians().sin_cos();
    let s = params.scale as f64;
    let src = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    let mut dst = [[0.0; 2]; 4];
    for i in 0..4 {
        let (dx, dy) = (src[i][0] - cx, src[i][1] - cy);
        dst[i] = [
            cx + s * (cos * dx - sin * dy) + params.corner_offsets[i][0] as f64,
            cy + s * (sin * dx + cos * dy) + params.corner_offsets[i][1] as f64,
        ];
    }
    // Inverse map: output position -> source position.
    let hm = homography(dst, src)?;
    let mut out_img = Rgb::filled(image.width, image.height, [0.0; 3]);
    let mut out_mask = Gray::new(mask.width, mask.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = hm[6] * px + hm[7] * py + hm[8];
            let u = (hm[0] * px + hm[1] * py + hm[2]) / d;
            let v = (hm[3] * px + hm[4] * py + hm[5]) / d;
            out_img.set(x, y, sample_rgb(image, (u - 0.5) as f32, (v - 0.5) as f32));
            let (mx, my) = (u.floor(), v.floor());
            if mx >= 0.0 && my >= 0.0 && mx < w && my < h {
                out_mask.set(x, y, mask.get(mx as usize, my as usize));
            }
        }
    }
    Ok((out_img, out_mask))
}
