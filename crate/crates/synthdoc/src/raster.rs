//! Minimal float rasters and their 8-bit PNG encodings.

use std::path::Path;

use sigseg_core::{Shape, Tensor};

use crate::error::{Result, SynthError};

/// Single-channel raster, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Interleaved RGB raster, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl Gray {
    pub fn new(width: usize, height: usize) -> Self {
        Gray {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.data.clone())
            .expect("raster extents match")
    }

    /// Encodes `round(255 v)` per pixel.
    pub fn to_image(&self) -> image::GrayImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches")
    }

    pub fn from_image(img: &image::GrayImage) -> Self {
        Gray {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

impl Rgb {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Rgb {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        self.data[y * self.width + x] = v;
    }

    /// Planar `1×3×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.data.iter().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        Tensor::from_vec(Shape::new(1, 3, self.height, self.width), out).expect("raster extents match")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 3 {
            return Err(SynthError::Config(format!("expected a 1x3xHxW tensor, got {s}")));
        }
        let plane = s.plane();
        let d = t.data();
        Ok(Rgb {
            width: s.w(),
            height: s.h(),
            data: (0..plane)
                .map(|i| [d[i], d[plane + i], d[2 * plane + i]])
                .collect(),
        })
    }

    pub fn to_image(&self) -> image::RgbImage {
        let bytes = self.data.iter().flat_map(|px| px.map(quantize)).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches")
    }

    pub fn from_image(img: &image::RgbImage) -> Self {
        Rgb {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img
                .pixels()
                .map(|p| p.0.map(|b| b as f32 / 255.0))
                .collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Per-channel population variance averaged over channels.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        (0..3)
            .map(|c| {
                let mean = self.data.iter().map(|p| p[c] as f64).sum::<f64>() / n;
                self.data.iter().map(|p| (p[c] as f64 - mean).powi(2)).sum::<f64>() / n
            })
            .sum::<f64>()
            / 3.0
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resize of an RGB raster, sampling at pixel centers with edge clamp.
pub fn resize_bilinear(src: &Rgb, width: usize, height: usize) -> Rgb {
    let sx = src.width as f32 / width as f32;
    let sy = src.height as f32 / height as f32;
    let mut out = Rgb::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5) * sx - 0.5;
            let v = (y as f32 + 0.5) * sy - 0.5;
            out.set(x, y, sample_rgb(src, u, v));
        }
    }
    out
}

/// Bilinear sample at continuous pixel-index coordinates, clamping to the
/// border.
pub fn sample_rgb(src: &Rgb, u: f32, v: f32) -> [f32; 3] {
    let maxx = (src.width - 1) as f32;
    let maxy = (src.height - 1) as f32;
    let u = u.clamp(0.0, maxx);
    let v = v.clamp(0.0, maxy);
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(src.width - 1), (y0 + 1).min(src.height - 1));
    let (fx, fy) = (u - x0 as f32, v - y0 as f32);
    let (a, b, c, d) = (src.get(x0, y0), src.get(x1, y0), src.get(x0, y1), src.get(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bot = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bot - top) * fy;
    }
    out
}
