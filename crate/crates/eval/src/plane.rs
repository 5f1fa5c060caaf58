use sigseg_core::Tensor;

use crate::error::{EvalError, Result};

/// A single-channel raster in `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(EvalError::Metric(format!(
                "{width}x{height} plane needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Reads a `1×1×H×W` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 1 {
            return Err(EvalError::Metric(format!("expected a 1x1xHxW raster, got {s}")));
        }
        Ok(Plane {
            width: s.w(),
            height: s.h(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Reads with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Translates by `(dx, dy)`, filling uncovered pixels with `fill`.
    pub fn shifted(&self, dx: isize, dy: isize, fill: f64) -> Plane {
        let mut out = Plane::filled(self.width, self.height, fill);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let (sx, sy) = (x - dx, y - dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                    out.data[y as usize * self.width + x as usize] = self.get(sx as usize, sy as usize);
                }
            }
        }
        out
    }
}
