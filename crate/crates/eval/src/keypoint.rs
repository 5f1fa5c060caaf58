//! Difference-of-Gaussian keypoints with upright 4×4×8 gradient histograms,
//! and the match rate between two renderings.
//!
//! The rate is the fraction of keypoints in the reference rendering that
//! find a partner in the candidate: nearest descriptor by Euclidean
//! distance, Lowe's ratio test against the second nearest, and a greedy
//! one-to-one assignment in order of increasing distance.

use std::f64::consts::TAU;

use crate::error::{EvalError, Result};
use crate::plane::Plane;

pub const OCTAVES: usize = 3;
pub const SCALES_PER_OCTAVE: usize = 3;
pub const CONTRAST_THRESHOLD: f64 = 0.03;
/// Principal-curvature ratio above which an extremum is treated as an edge.
pub const EDGE_RATIO: f64 = 10.0;
pub const RATIO_TEST: f64 = 0.8;
pub const MIN_SIZE: usize = 32;

const SIGMA0: f64 = 1.6;
/// Blur assumed already present in the input.
const INPUT_BLUR: f64 = 0.5;
const CELLS: usize = 4;
const BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = CELLS * CELLS * BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Position in input pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub octave: usize,
    pub layer: usize,
    /// Blur of the detection layer relative to its octave.
    pub sigma: f64,
    pub response: f64,
    pub descriptor: Vec<f64>,
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge clamping.
fn blur(p: &Plane, sigma: f64) -> Plane {
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = Plane::filled(p.width, p.height, 0.0);
    for y in 0..p.height {
        for x in 0..p.width {
            tmp.data[y * p.width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * p.get_clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let mut out = Plane::filled(p.width, p.height, 0.0);
    for y in 0..p.height {
        for x in 0..p.width {
            out.data[y * p.width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * tmp.get_clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    out
}

/// Doubles both extents with bilinear interpolation (pixel-center aligned).
fn upsample(p: &Plane) -> Plane {
    let (w, h) = (p.width * 2, p.height * 2);
    let mut out = Plane::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f64 + 0.5) / 2.0 - 0.5;
            let sy = (y as f64 + 0.5) / 2.0 - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = (1.0 - fx) * p.get_clamped(x0, y0) + fx * p.get_clamped(x0 + 1, y0);
            let bottom = (1.0 - fx) * p.get_clamped(x0, y0 + 1) + fx * p.get_clamped(x0 + 1, y0 + 1);
            out.data[y * w + x] = (1.0 - fy) * top + fy * bottom;
        }
    }
    out
}

fn downsample(p: &Plane) -> Plane {
    let (w, h) = (p.width / 2, p.height / 2);
    let mut out = Plane::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = p.get(2 * x, 2 * y);
        }
    }
    out
}

fn is_extremum(dog: &[Plane], l: usize, x: usize, y: usize) -> bool {
    let v = dog[l].get(x, y);
    let (mut max, mut min) = (true, true);
    for d in &dog[l - 1..=l + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(d, &dog[l]) && xx == x && yy == y {
                    continue;
                }
                let n = d.get(xx, yy);
                max &= v > n;
                min &= v < n;
            }
        }
        if !max && !min {
            return false;
        }
    }
    max || min
}

fn is_edge(d: &Plane, x: usize, y: usize) -> bool {
    let c = d.get(x, y);
    let dxx = d.get(x + 1, y) + d.get(x - 1, y) - 2.0 * c;
    let dyy = d.get(x, y + 1) + d.get(x, y - 1) - 2.0 * c;
    let dxy = (d.get(x + 1, y + 1) - d.get(x + 1, y - 1) - d.get(x - 1, y + 1) + d.get(x - 1, y - 1)) / 4.0;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det <= 0.0 || tr * tr / det >= (EDGE_RATIO + 1.0).powi(2) / EDGE_RATIO
}

/// Upright gradient-orientation histogram around `(x, y)` in the blurred
/// octave image `g`; each cell spans `3σ` pixels.
fn describe(g: &Plane, x: usize, y: usize, sigma: f64) -> Vec<f64> {
    let cell = 3.0 * sigma;
    let half = CELLS as f64 / 2.0 * cell;
    let reach = half.ceil() as isize + 1;
    let weight_sigma = half;
    let mut hist = vec![0.0; DESCRIPTOR_LEN];
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            // Cell coordinates with cell centers at integers 0..CELLS-1.
            let cx = dx as f64 / cell + CELLS as f64 / 2.0 - 0.5;
            let cy = dy as f64 / cell + CELLS as f64 / 2.0 - 0.5;
            if cx <= -1.0 || cy <= -1.0 || cx >= CELLS as f64 || cy >= CELLS as f64 {
                continue;
            }
            let (px, py) = (x as isize + dx, y as isize + dy);
            let gx = g.get_clamped(px + 1, py) - g.get_clamped(px - 1, py);
            let gy = g.get_clamped(px, py + 1) - g.get_clamped(px, py - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let co = gy.atan2(gx).rem_euclid(TAU) / TAU * BINS as f64;
            let (x0, y0, o0) = (cx.floor(), cy.floor(), co.floor());
            let (fx, fy, fo) = (cx - x0, cy - y0, co - o0);
            for (iy, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
                if !(0..CELLS as isize).contains(&iy) {
                    continue;
                }
                for (ix, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
                    if !(0..CELLS as isize).contains(&ix) {
                        continue;
                    }
                    for (io, wo) in [(o0 as usize % BINS, 1.0 - fo), ((o0 as usize + 1) % BINS, fo)] {
                        let idx = (iy as usize * CELLS + ix as usize) * BINS + io;
                        hist[idx] += w * mag * wx * wy * wo;
                    }
                }
            }
        }
    }
    normalize(&mut hist);
    hist.iter_mut().for_each(|v| *v = v.min(0.2));
    normalize(&mut hist);
    hist
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Detects and describes keypoints. Rasters smaller than 32×32 are rejected.
pub fn detect_keypoints(img: &Plane) -> Result<Vec<Keypoint>> {
    if img.width < MIN_SIZE || img.height < MIN_SIZE {
        return Err(EvalError::Metric(format!(
            "keypoint detection needs at least {MIN_SIZE}x{MIN_SIZE} pixels, got {}x{}",
            img.width, img.height
        )));
    }
    let k = 2f64.powf(1.0 / SCALES_PER_OCTAVE as f64);
    // The pyramid starts from the input at twice its resolution, where the
    // assumed input blur doubles as well.
    let mut base = blur(&upsample(img), (SIGMA0 * SIGMA0 - 4.0 * INPUT_BLUR * INPUT_BLUR).sqrt());
    let mut out = Vec::new();
    for octave in 0..OCTAVES {
        let mut gauss = vec![base];
        for i in 1..SCALES_PER_OCTAVE + 3 {
            let prev = SIGMA0 * k.powi(i as i32 - 1);
            let cur = SIGMA0 * k.powi(i as i32);
            let next = blur(&gauss[i - 1], (cur * cur - prev * prev).sqrt());
            gauss.push(next);
        }
        let dog: Vec<Plane> = gauss
            .windows(2)
            .map(|p| Plane {
                width: p[0].width,
                height: p[0].height,
                data: p[1].data.iter().zip(&p[0].data).map(|(a, b)| a - b).collect(),
            })
            .collect();
        let (w, h) = (dog[0].width, dog[0].height);
        let scale = (1usize << octave) as f64 / 2.0;
        for layer in 1..=SCALES_PER_OCTAVE {
            let d = &dog[layer];
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = d.get(x, y);
                    if v.abs() < CONTRAST_THRESHOLD || !is_extremum(&dog, layer, x, y) || is_edge(d, x, y) {
                        continue;
                    }
                    let sigma = SIGMA0 * k.powi(layer as i32);
                    out.push(Keypoint {
                        x: x as f64 * scale,
                        y: y as f64 * scale,
                        octave,
                        layer,
                        sigma,
                        response: v,
                        descriptor: describe(&gauss[layer], x, y, sigma),
                    });
                }
            }
        }
        base = downsample(&gauss[SCALES_PER_OCTAVE]);
    }
    Ok(out)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Number of `truth` keypoints matched one-to-one into `pred`.
pub fn count_matches(pred: &[Keypoint], truth: &[Keypoint]) -> usize {
    let mut pairs = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        let dists: Vec<f64> = pred.iter().map(|p| distance(&t.descriptor, &p.descriptor)).collect();
        let mut sorted = dists.clone();
        sorted.sort_by(f64::total_cmp);
        let Some(&d1) = sorted.first() else { continue };
        let d2 = sorted.get(1).copied().unwrap_or(f64::INFINITY);
        // Exact descriptor matches always pass, even against an exact duplicate.
        if d1 == 0.0 || d1 < RATIO_TEST * d2 {
            for (pi, &d) in dists.iter().enumerate() {
                if d <= d1 {
                    pairs.push((d, ti, pi));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut matched = 0;
    for (_, ti, pi) in pairs {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            matched += 1;
        }
    }
    matched
}

/// Fraction of `truth` keypoints matched in `pred`. When `truth` has no
/// keypoints the rate is 1 if `pred` has none either, else 0.
pub fn keypoint_match_rate(pred: &Plane, truth: &Plane) -> Result<f64> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(EvalError::Metric(format!(
            "keypoint rate: {}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let kp_truth = detect_keypoints(truth)?;
    let kp_pred = detect_keypoints(pred)?;
    if kp_truth.is_empty() {
        return Ok(if kp_pred.is_empty() { 1.0 } else { 0.0 });
    }
    Ok(count_matches(&kp_pred, &kp_truth) as f64 / kp_truth.len() as f64)
}
