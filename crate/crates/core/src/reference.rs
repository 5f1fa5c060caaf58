//! Direct loop implementations of the engine's layer ops.
//!
//! These are slow on purpose: each one follows its defining sum literally and
//! shares no code with the GEMM lowering in [`crate::ops`], so the test suites
//! can use them as independent oracles.

use crate::tensor::{Shape, Tensor};

/// Six-loop cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (si, sw) = (input.shape(), weight.shape());
    let (n, cin, h, w) = (si.n(), si.c(), si.h(), si.w());
    let (cout, kh, kw) = (sw.n(), sw.h(), sw.w());
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(n, cout, ho, wo));
    for b in 0..n {
        for co in 0..cout {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = bias.map_or(0.0, |t| t.data()[co]);
                    for ci in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (x * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.at(b, ci, iy as usize, ix as usize)
                                    * weight.at(co, ci, i, j);
                            }
                        }
                    }
                    let o = out.offset(b, co, y, x);
                    out.data_mut()[o] = acc;
                }
            }
        }
    }
    out
}

/// Transposed convolution as scatter-accumulate: every input element adds
/// `x · w[ci, co]` onto the output window it maps to.
pub fn upconv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
    let (si, sw) = (input.shape(), weight.shape());
    let (n, cin, h, w) = (si.n(), si.c(), si.h(), si.w());
    let (cout, kh, kw) = (sw.c(), sw.h(), sw.w());
    let ho = (h - 1) * stride + kh;
    let wo = (w - 1) * stride + kw;
    let mut out = Tensor::zeros(Shape::new(n, cout, ho, wo));
    for b in 0..n {
        for ci in 0..cin {
            for y in 0..h {
                for x in 0..w {
                    let v = input.at(b, ci, y, x);
                    for co in 0..cout {
                        for i in 0..kh {
                            for j in 0..kw {
                                let o = out.offset(b, co, y * stride + i, x * stride + j);
                                out.data_mut()[o] += v * weight.at(ci, co, i, j);
                            }
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            for co in 0..cout {
                for y in 0..ho {
                    for x in 0..wo {
                        let o = out.offset(b, co, y, x);
                        out.data_mut()[o] += bias.data()[co];
                    }
                }
            }
        }
    }
    out
}

/// Windowed maximum.
pub fn max_pool2d(input: &Tensor, k: usize, stride: usize) -> Tensor {
    let s = input.shape();
    let ho = (s.h() - k) / stride + 1;
    let wo = (s.w() - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), ho, wo));
    for b in 0..s.n() {
        for c in 0..s.c() {
            for y in 0..ho {
                for x in 0..wo {
                    let mut m = f32::NEG_INFINITY;
                    for i in 0..k {
                        for j in 0..k {
                            m = m.max(input.at(b, c, y * stride + i, x * stride + j));
                        }
                    }
                    let o = out.offset(b, c, y, x);
                    out.data_mut()[o] = m;
                }
            }
        }
    }
    out
}

/// Train-mode batch normalization: one pass for the channel mean, a second
/// for the biased variance.
pub fn batch_norm_train(input: &Tensor, gamma: &[f32], beta: &[f32], eps: f32) -> Tensor {
    let s = input.shape();
    let count = (s.n() * s.h() * s.w()) as f64;
    let mut out = input.clone();
    for c in 0..s.c() {
        let mut mean = 0.0f64;
        for b in 0..s.n() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    mean += input.at(b, c, y, x) as f64;
                }
            }
        }
        mean /= count;
        let mut var = 0.0f64;
        for b in 0..s.n() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    var += (input.at(b, c, y, x) as f64 - mean).powi(2);
                }
            }
        }
        var /= count;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for b in 0..s.n() {
            for y in 0..s.h() {
                for x in 0..s.w() {
                    let o = out.offset(b, c, y, x);
                    let xhat = (input.at(b, c, y, x) as f64 - mean) * inv;
                    out.data_mut()[o] = (gamma[c] as f64 * xhat + beta[c] as f64) as f32;
                }
            }
        }
    }
    out
}
