//! Procedural handwriting: chains of cubic Bézier segments stamped with a
//! round, anti-aliased pen.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SynthError};
use crate::raster::Gray;
use crate::seed;

pub const MIN_CANVAS: usize = 32;
pub const MASK_THRESHOLD: f32 = 0.1;
pub const MAX_MASK_FRACTION: f64 = 0.2;
const MAX_ATTEMPTS: u64 = 64;

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Bounding box of pixels where `pred` holds, or `None` if there are none.
    pub fn of(raster: &Gray, pred: impl Fn(f32) -> bool) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for y in 0..raster.height {
            for x in 0..raster.width {
                if !pred(raster.get(x, y)) {
                    continue;
                }
                b = Some(match b {
                    None => BBox { x0: x, y0: y, x1: x, y1: y },
                    Some(b) => BBox {
                        x0: b.x0.min(x),
                        y0: b.y0.min(y),
                        x1: b.x1.max(x),
                        y1: b.y1.max(y),
                    },
                });
            }
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    /// Ink coverage in `[0, 1]`.
    pub coverage: Gray,
    /// `1` where coverage exceeds [`MASK_THRESHOLD`].
    pub mask: Gray,
    pub bbox: BBox,
    pub strokes: usize,
    /// Nominal pen width in pixels.
    pub stroke_width: f32,
    /// Number of rejected drafts before this one.
    pub attempt: u64,
}

#[derive(Clone, Copy)]
struct Pt {
    x: f32,
    y: f32,
}

fn cubic(p: [Pt; 4], t: f32) -> Pt {
    let u = 1.0 - t;
    let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    Pt {
        x: a * p[0].x + b * p[1].x + c * p[2].x + d * p[3].x,
        y: a * p[0].y + b * p[1].y + c * p[2].y + d * p[3].y,
    }
}

/// Max-composites one round pen dab of radius `r` and darkness `dark` at `p`.
fn stamp(cov: &mut Gray, p: Pt, r: f32, dark: f32) {
    let reach = r + 1.0;
    let x0 = (p.x - reach).floor().max(0.0) as usize;
    let y0 = (p.y - reach).floor().max(0.0) as usize;
    let x1 = ((p.x + reach).ceil() as usize).min(cov.width - 1);
    let y1 = ((p.y + reach).ceil() as usize).min(cov.height - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f32 + 0.5 - p.x;
            let dy = y as f32 + 0.5 - p.y;
            let a = (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0) * dark;
            if a > cov.get(x, y) {
                cov.set(x, y, a);
            }
        }
    }
}

fn draft(seed: u64, width: usize, height: usize) -> (Gray, usize, f32) {
    let mut rng = seed::rng(seed);
    let (w, h) = (width as f32, height as f32);
    let cx = w * rng.gen_range(0.4..0.6);
    let cy = h * rng.gen_range(0.35..0.65);
    let half_w = w * rng.gen_range(0.22..0.38);
    let half_h = h * rng.gen_range(0.07..0.15);
    let band = |rng: &mut rand_chacha::ChaCha8Rng, spread: f32| cy + half_h * spread * rng.gen_range(-1.0f32..1.0);

    let strokes = rng.gen_range(2..=6usize);
    // Thin pens are more common than heavy markers.
    let base_width = 1.0 + 3.0 * rng.gen_range(0.0f32..1.0).powi(2);
    let mut cov = Gray::new(width, height);
    for _ in 0..strokes {
        let segments = rng.gen_range(1..=3usize);
        let span = 2.0 * half_w * rng.gen_range(0.3f32..0.8);
        let left = cx - half_w + rng.gen_range(0.0..=(2.0 * half_w - span));
        let step = span / segments as f32;
        let mut start = Pt { x: left, y: band(&mut rng, 1.0) };
        // Reflected control point keeps consecutive segments tangent-continuous.
        let mut lead: Option<Pt> = None;
        for k in 0..segments {
            let x_end = left + step * (k + 1) as f32;
            let c1 = match lead {
                Some(prev) => Pt {
                    x: 2.0 * start.x - prev.x,
                    y: 2.0 * start.y - prev.y,
                },
                None => Pt {
                    x: start.x + step * rng.gen_range(-0.2f32..0.6),
                    y: band(&mut rng, 1.6),
                },
            };
            let c2 = Pt {
                x: x_end - step * rng.gen_range(-0.2f32..0.6),
                y: band(&mut rng, 1.6),
            };
            let end = Pt { x: x_end, y: band(&mut rng, 1.0) };
            let pts = [start, c1, c2, end];
            let len: f32 = pts
                .windows(2)
                .map(|s| ((s[1].x - s[0].x).powi(2) + (s[1].y - s[0].y).powi(2)).sqrt())
                .sum();
            let steps = (len * 4.0).ceil().max(4.0) as usize;
            let phase = rng.gen_range(0.0f32..std::f32::consts::TAU);
            for i in 0..=steps {
                let t = i as f32 / steps as f32;
                let p = cubic(pts, t);
                let pen = (base_width * (1.0 + 0.25 * (phase + 6.0 * t).sin())).clamp(1.0, 4.0);
                let dark = rng.gen_range(0.8f32..1.0);
                stamp(&mut cov, p, pen / 2.0, dark);
            }
            lead = Some(c2);
            start = end;
        }
    }
    (cov, strokes, base_width)
}

/// Renders a synthetic signature on an `width × height` canvas.
///
/// Drafts whose mask would cover more than 20% of the canvas are redrawn from
/// the next sub-seed.
pub fn gen_signature(seed: u64, width: usize, height: usize) -> Result<Signature> {
    if width < MIN_CANVAS || height < MIN_CANVAS {
        return Err(SynthError::Config(format!(
            "canvas {width}x{height} is smaller than the {MIN_CANVAS}px minimum"
        )));
    }
    let limit = (MAX_MASK_FRACTION * (width * height) as f64) as usize;
    for attempt in 0..MAX_ATTEMPTS {
        let (coverage, strokes, stroke_width) = draft(seed::derive(seed, attempt), width, height);
        let mut mask = Gray::new(width, height);
        for (m, &c) in mask.data.iter_mut().zip(&coverage.data) {
            *m = if c > MASK_THRESHOLD { 1.0 } else { 0.0 };
        }
        let set = mask.count_set();
        if set == 0 || set > limit {
            continue;
        }
        let bbox = BBox::of(&coverage, |c| c > 0.0).expect("mask is nonempty");
        return Ok(Signature {
            coverage,
            mask,
            bbox,
            strokes,
            stroke_width,
            attempt,
        });
    }
    Err(SynthError::Config(format!(
        "no signature within the coverage limit after {MAX_ATTEMPTS} drafts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_canvas_is_rejected() {
        assert!(matches!(gen_signature(0, 31, 64), Err(SynthError::Config(_))));
        assert!(gen_signature(0, 32, 32).is_ok());
    }

    #[test]
    fn same_seed_same_raster() {
        let a = gen_signature(42, 64, 64).unwrap();
        let b = gen_signature(42, 64, 64).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.coverage, gen_signature(43, 64, 64).unwrap().coverage);
    }

    #[test]
    fn ink_lies_inside_bbox() {
        let s = gen_signature(5, 96, 64).unwrap();
        for y in 0..s.coverage.height {
            for x in 0..s.coverage.width {
                if s.coverage.get(x, y) > 0.0 {
                    assert!(s.bbox.contains(x, y));
                }
            }
        }
        assert!((2..=6).contains(&s.strokes));
        assert!((1.0..=4.0).contains(&s.stroke_width));
    }
}
