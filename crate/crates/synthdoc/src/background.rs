//! Procedural document backgrounds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Rgb;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    Clean,
    Textured,
    PrintedText,
    PhotoNoise,
}

impl Style {
    pub const ALL: [Style; 4] = [Style::Clean, Style::Textured, Style::PrintedText, Style::PhotoNoise];
}

/// A horizontal run of printed ink `[x0, x1) × [y0, y0 + thickness)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextRun {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub thickness: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub style: Style,
    pub image: Rgb,
    /// Printed line segments, non-empty only for [`Style::PrintedText`].
    pub text_runs: Vec<TextRun>,
}

fn paper_tint(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let base = rng.gen_range(0.86f32..0.97);
    [
        base + rng.gen_range(-0.02..0.02),
        base + rng.gen_range(-0.02..0.02),
        base + rng.gen_range(-0.05..0.0),
    ]
}

fn clamp01(c: [f32; 3]) -> [f32; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Bilinearly interpolated lattice noise in `[-1, 1]` with lattice spacing
/// `cell` pixels.
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: usize) -> Vec<f32> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let fx = x as f32 / cell as f32;
            let fy = y as f32 / cell as f32;
            let (ix, iy) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - ix as f32, fy - iy as f32);
            // Smoothstep blending hides the lattice grid.
            let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let l = |i: usize, j: usize| lattice[j * gw + i];
            let top = l(ix, iy) + (l(ix + 1, iy) - l(ix, iy)) * sx;
            let bot = l(ix, iy + 1) + (l(ix + 1, iy + 1) - l(ix, iy + 1)) * sx;
            out.push(top + (bot - top) * sy);
        }
    }
    out
}

/// Generates one background of the given style. Deterministic in `seed`.
pub fn gen_background(seed: u64, width: usize, height: usize, style: Style) -> Background {
    let mut rng = seed::rng(seed);
    let tint = paper_tint(&mut rng);
    let mut image = Rgb::filled(width, height, tint);
    let mut text_runs = Vec::new();
    match style {
        Style::Clean => {
            for px in image.data.iter_mut() {
                let n = rng.gen_range(-0.01f32..0.01);
                *px = clamp01(px.map(|v| v + n));
            }
        }
        Style::Textured => {
            let coarse = value_noise(&mut rng, width, height, 16);
            let fine = value_noise(&mut rng, width, height, 4);
            let amp = rng.gen_range(0.08f32..0.14);
            let hue = [rng.gen_range(0.6f32..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
            for (i, px) in image.data.iter_mut().enumerate() {
                let n = amp * (0.7 * coarse[i] + 0.3 * fine[i]);
                *px = clamp01([px[0] + n * hue[0], px[1] + n * hue[1], px[2] + n * hue[2]]);
            }
        }
        Style::PrintedText => {
            for px in image.data.iter_mut() {
                let n = rng.gen_range(-0.01f32..0.01);
                *px = clamp01(px.map(|v| v + n));
            }
            let ink = rng.gen_range(0.08f32..0.3);
            let spacing = rng.gen_range(6..=9usize);
            let margin = (width / 16).max(2);
            let mut y = rng.gen_range(2..=4usize);
            while y + 2 < height {
                let thickness = rng.gen_range(1..=2usize);
                let mut x = margin + rng.gen_range(0..=margin);
                let right = width - margin;
                // Words of 3 to 12 pixels separated by 2 to 4 pixel gaps.
                while x + 3 <= right {
                    let len = rng.gen_range(3..=12usize).min(right - x);
                    text_runs.push(TextRun {
                        x0: x,
                        x1: x + len,
                        y0: y,
                        thickness,
                    });
                    for yy in y..(y + thickness).min(height) {
                        for xx in x..x + len {
                            image.set(xx, yy, [ink, ink, ink + 0.02]);
                        }
                    }
                    x += len + rng.gen_range(2..=4usize);
                }
                y += spacing;
            }
        }
        Style::PhotoNoise => {
            let angle = rng.gen_range(0.0f32..std::f32::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            let depth = rng.gen_range(0.1f32..0.25);
            let diag = ((width * width + height * height) as f32).sqrt();
            for y in 0..height {
                for x in 0..width {
                    let t = ((x as f32 - width as f32 / 2.0) * dx + (y as f32 - height as f32 / 2.0) * dy) / diag + 0.5;
                    let light = 1.0 - depth * t;
                    // Sum of three uniforms approximates Gaussian grain.
                    let grain: f32 = (0..3).map(|_| rng.gen_range(-0.03f32..0.03)).sum();
                    let speck = if rng.gen_bool(0.01) { -rng.gen_range(0.3f32..0.5) } else { 0.0 };
                    let px = image.get(x, y);
                    image.set(x, y, clamp01(px.map(|v| v * light + grain + speck)));
                }
            }
        }
    }
    Background {
        style,
        image,
        text_runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_text_has_at_least_three_lines() {
        for s in 0..20 {
            let bg = gen_background(s, 32, 32, Style::PrintedText);
            let mut rows: Vec<usize> = bg.text_runs.iter().map(|r| r.y0).collect();
            rows.dedup();
            assert!(rows.len() >= 3, "seed {s}: {rows:?}");
        }
    }

    #[test]
    fn every_style_is_deterministic() {
        for style in Style::ALL {
            assert_eq!(gen_background(9, 40, 48, style), gen_background(9, 40, 48, style));
        }
    }
}
