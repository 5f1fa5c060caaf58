//! Forward and backward kernels on plain tensors.
//!
//! Convolutions lower to im2col + GEMM. Transposed convolution reuses the same
//! pair of lowering routines with their roles swapped, which makes it the exact
//! adjoint of a strided convolution.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, each operand described by its row and
/// column strides so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one 2-D sliding window pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `C×H×W` sample into a `(C·kh·kw) × (Ho·Wo)` patch matrix.
pub(crate) fn im2col(x: &[f32], g: &Window, col: &mut [f32]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto a `C×H×W` sample.
pub(crate) fn col2im(col: &[f32], g: &Window, x: &mut [f32]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_vector(name: &str, t: &Tensor, len: usize) -> Result<()> {
    if t.numel() != len {
        return Err(Error::dim(format!(
            "{name} has {} elements, expected {len}",
            t.numel()
        )));
    }
    Ok(())
}

fn conv_window(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Window> {
    if stride == 0 {
        return Err(Error::dim("conv2d stride must be >= 1"));
    }
    if input.c() != weight.c() {
        return Err(Error::dim(format!(
            "conv2d input has {} channels but weight {weight} expects {}",
            input.c(),
            weight.c()
        )));
    }
    let (kh, kw) = (weight.h(), weight.w());
    let (hp, wp) = (input.h() + 2 * padding, input.w() + 2 * padding);
    if kh > hp || kw > wp {
        return Err(Error::dim(format!(
            "conv2d kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
        )));
    }
    Ok(Window {
        channels: input.c(),
        h: input.h(),
        w: input.w(),
        kh,
        kw,
        stride,
        pad: padding,
        ho: (hp - kh) / stride + 1,
        wo: (wp - kw) / stride + 1,
    })
}

/// Cross-correlation of `input[N,Cin,H,W]` with `weight[Cout,Cin,kh,kw]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    let g = conv_window(is, ws, stride, padding)?;
    let cout = ws.n();
    if let Some(b) = bias {
        check_vector("conv2d bias", b, cout)?;
    }
    let out_shape = Shape::new(is.n(), cout, g.ho, g.wo);
    let mut out = vec![0.0f32; out_shape.numel()];
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; rows * cols]
    };
    let per_in = is.c() * is.plane();
    for n in 0..is.n() {
        let x = &input.data()[n * per_in..(n + 1) * per_in];
        let patches: &[f32] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        let y = &mut out[n * cout * cols..(n + 1) * cout * cols];
        let beta = match bias {
            Some(b) => {
                for (o, plane) in y.chunks_mut(cols).enumerate() {
                    plane.fill(b.data()[o]);
                }
                1.0
            }
            None => 0.0,
        };
        gemm(cout, rows, cols, weight.data(), (rows, 1), patches, (cols, 1), y, beta);
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of [`conv2d`]; each output slot is filled only when requested.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f32],
    stride: usize,
    padding: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let (is, ws) = (input.shape(), weight.shape());
    let g = conv_window(is, ws, stride, padding)?;
    let cout = ws.n();
    let (rows, cols) = (g.rows(), g.cols());
    let per_in = is.c() * is.plane();

    let mut d_input = need.0.then(|| vec![0.0f32; is.numel()]);
    let mut d_weight = need.1.then(|| vec![0.0f32; ws.numel()]);
    let d_bias = need.2.then(|| {
        let mut db = vec![0.0f32; cout];
        for n in 0..is.n() {
            for (o, acc) in db.iter_mut().enumerate() {
                let off = (n * cout + o) * cols;
                *acc += grad_out[off..off + cols].iter().sum::<f32>();
            }
        }
        db
    });

    let mut col = vec![0.0f32; rows * cols];
    for n in 0..is.n() {
        let dy = &grad_out[n * cout * cols..(n + 1) * cout * cols];
        if let Some(dw) = d_weight.as_mut() {
            let x = &input.data()[n * per_in..(n + 1) * per_in];
            let patches: &[f32] = if g.is_pointwise() {
                x
            } else {
                im2col(x, &g, &mut col);
                &col
            };
            // dW[cout×rows] += dY[cout×cols] · patchesᵀ
            gemm(cout, cols, rows, dy, (cols, 1), patches, (1, cols), dw, 1.0);
        }
        if let Some(dx) = d_input.as_mut() {
            let dx_n = &mut dx[n * per_in..(n + 1) * per_in];
            if g.is_pointwise() {
                gemm(rows, cout, cols, weight.data(), (1, rows), dy, (cols, 1), dx_n, 1.0);
            } else {
                gemm(rows, cout, cols, weight.data(), (1, rows), dy, (cols, 1), &mut col, 0.0);
                col2im(&col, &g, dx_n);
            }
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

fn upconv_window(input: Shape, weight: Shape, stride: usize) -> Result<Window> {
    if stride == 0 {
        return Err(Error::dim("upconv2d stride must be >= 1"));
    }
    if input.c() != weight.n() {
        return Err(Error::dim(format!(
            "upconv2d input has {} channels but weight {weight} expects {}",
            input.c(),
            weight.n()
        )));
    }
    let (kh, kw) = (weight.h(), weight.w());
    Ok(Window {
        channels: weight.c(),
        h: (input.h() - 1) * stride + kh,
        w: (input.w() - 1) * stride + kw,
        kh,
        kw,
        stride,
        pad: 0,
        ho: input.h(),
        wo: input.w(),
    })
}

/// Transposed convolution of `input[N,Cin,H,W]` with `weight[Cin,Cout,kh,kw]`.
///
/// The output has extents `((H-1)·stride + kh, (W-1)·stride + kw)`, so a 2×2
/// kernel at stride 2 exactly doubles the spatial size.
pub fn upconv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    let g = upconv_window(is, ws, stride)?;
    let (cin, cout) = (ws.n(), ws.c());
    if let Some(b) = bias {
        check_vector("upconv2d bias", b, cout)?;
    }
    let out_shape = Shape::new(is.n(), cout, g.h, g.w);
    let per_out = cout * g.h * g.w;
    let mut out = vec![0.0f32; out_shape.numel()];
    let (rows, cols) = (g.rows(), g.cols());
    let mut col = vec![0.0f32; rows * cols];
    for n in 0..is.n() {
        let x = &input.data()[n * cin * cols..(n + 1) * cin * cols];
        // col[rows×cols] = Wᵀ[rows×cin] · x[cin×cols]
        gemm(rows, cin, cols, weight.data(), (1, rows), x, (cols, 1), &mut col, 0.0);
        let y = &mut out[n * per_out..(n + 1) * per_out];
        if let Some(b) = bias {
            for (o, plane) in y.chunks_mut(g.h * g.w).enumerate() {
                plane.fill(b.data()[o]);
            }
        }
        col2im(&col, &g, y);
    }
    Tensor::from_vec(out_shape, out)
}

pub(crate) fn upconv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &[f32],
    stride: usize,
    need: (bool, bool, bool),
) -> Result<ConvGrads> {
    let (is, ws) = (input.shape(), weight.shape());
    let g = upconv_window(is, ws, stride)?;
    let (cin, cout) = (ws.n(), ws.c());
    let (rows, cols) = (g.rows(), g.cols());
    let per_out = cout * g.h * g.w;

    let mut d_input = need.0.then(|| vec![0.0f32; is.numel()]);
    let mut d_weight = need.1.then(|| vec![0.0f32; ws.numel()]);
    let d_bias = need.2.then(|| {
        let mut db = vec![0.0f32; cout];
        let plane = g.h * g.w;
        for n in 0..is.n() {
            for (o, acc) in db.iter_mut().enumerate() {
                let off = n * per_out + o * plane;
                *acc += grad_out[off..off + plane].iter().sum::<f32>();
            }
        }
        db
    });

    let mut col = vec![0.0f32; rows * cols];
    for n in 0..is.n() {
        im2col(&grad_out[n * per_out..(n + 1) * per_out], &g, &mut col);
        if let Some(dx) = d_input.as_mut() {
            let dx_n = &mut dx[n * cin * cols..(n + 1) * cin * cols];
            gemm(cin, rows, cols, weight.data(), (rows, 1), &col, (cols, 1), dx_n, 1.0);
        }
        if let Some(dw) = d_weight.as_mut() {
            let x = &input.data()[n * cin * cols..(n + 1) * cin * cols];
            gemm(cin, cols, rows, x, (cols, 1), &col, (1, cols), dw, 1.0);
        }
    }
    Ok(ConvGrads {
        input: d_input,
        weight: d_weight,
        bias: d_bias,
    })
}

/// Window-max pooling. Returns the pooled tensor and, per output element, the
/// flat input index of its maximum. Ties keep the first index in row-major
/// window order.
pub fn max_pool2d(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    let s = input.shape();
    if k == 0 || stride == 0 {
        return Err(Error::dim("max_pool2d kernel and stride must be >= 1"));
    }
    if k > s.h() || k > s.w() {
        return Err(Error::dim(format!(
            "max_pool2d window {k} exceeds input {}x{}",
            s.h(),
            s.w()
        )));
    }
    let (ho, wo) = ((s.h() - k) / stride + 1, (s.w() - k) / stride + 1);
    let out_shape = Shape::new(s.n(), s.c(), ho, wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let x = input.data();
    for plane in 0..s.n() * s.c() {
        let base = plane * s.plane();
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_idx = base + oy * stride * s.w() + ox * stride;
                let mut best = x[best_idx];
                for ki in 0..k {
                    let row = base + (oy * stride + ki) * s.w() + ox * stride;
                    for kj in 0..k {
                        let v = x[row + kj];
                        if v > best {
                            best = v;
                            best_idx = row + kj;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}

/// Per-channel running statistics tracked by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f32,
    /// Weight kept by the running statistics at each update:
    /// `running = momentum · running + (1 − momentum) · batch`.
    pub momentum: f32,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.9,
        }
    }
}

/// Values cached by the forward pass for [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub(crate) struct BatchNormSaved {
    pub mode: Mode,
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub(crate) fn batch_norm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    cfg: BatchNormConfig,
    mode: Mode,
    running: &mut RunningStats,
) -> Result<(Tensor, BatchNormSaved)> {
    let s = input.shape();
    let c = s.c();
    check_vector("batch_norm gamma", gamma, c)?;
    check_vector("batch_norm beta", beta, c)?;
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::dim(format!(
            "batch_norm running stats sized {} for {c} channels",
            running.mean.len()
        )));
    }
    let plane = s.plane();
    let count = s.n() * plane;
    if mode == Mode::Train && count < 2 {
        return Err(Error::dim(
            "batch_norm in train mode needs at least 2 values per channel",
        ));
    }
    let x = input.data();
    let mut xhat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; c];
    for ch in 0..c {
        let planes = (0..s.n()).map(|n| (n * c + ch) * plane);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f32;
                for off in planes.clone() {
                    sum += x[off..off + plane].iter().sum::<f32>();
                }
                let mean = sum / count as f32;
                let mut sq = 0.0f32;
                for off in planes.clone() {
                    sq += x[off..off + plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f32>();
                }
                let var = sq / count as f32;
                let unbiased = sq / (count - 1) as f32;
                let m = cfg.momentum;
                running.mean[ch] = m * running.mean[ch] + (1.0 - m) * mean;
                running.var[ch] = m * running.var[ch] + (1.0 - m) * unbiased;
                (mean, var)
            }
            Mode::Eval => (running.mean[ch], running.var[ch]),
        };
        let istd = 1.0 / (var + cfg.eps).sqrt();
        inv_std[ch] = istd;
        for off in planes {
            for i in off..off + plane {
                xhat[i] = (x[i] - mean) * istd;
            }
        }
    }
    let mut out = vec![0.0f32; x.len()];
    for n in 0..s.n() {
        for ch in 0..c {
            let off = (n * c + ch) * plane;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                out[i] = g * xhat[i] + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(s, out)?,
        BatchNormSaved {
            mode,
            xhat,
            inv_std,
        },
    ))
}

pub(crate) struct BatchNormGrads {
    pub input: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

pub(crate) fn batch_norm_backward(
    shape: Shape,
    gamma: &Tensor,
    saved: &BatchNormSaved,
    grad_out: &[f32],
) -> BatchNormGrads {
    let c = shape.c();
    let plane = shape.plane();
    let count = (shape.n() * plane) as f32;
    let mut d_input = vec![0.0f32; shape.numel()];
    let mut d_gamma = vec![0.0f32; c];
    let mut d_beta = vec![0.0f32; c];
    for ch in 0..c {
        let offs: Vec<usize> = (0..shape.n()).map(|n| (n * c + ch) * plane).collect();
        let mut sum_dy = 0.0f32;
        let mut sum_dy_xhat = 0.0f32;
        for &off in &offs {
            for i in off..off + plane {
                sum_dy += grad_out[i];
                sum_dy_xhat += grad_out[i] * saved.xhat[i];
            }
        }
        d_gamma[ch] = sum_dy_xhat;
        d_beta[ch] = sum_dy;
        let scale = gamma.data()[ch] * saved.inv_std[ch];
        match saved.mode {
            Mode::Train => {
                for &off in &offs {
                    for i in off..off + plane {
                        d_input[i] = scale / count
                            * (count * grad_out[i] - sum_dy - saved.xhat[i] * sum_dy_xhat);
                    }
                }
            }
            Mode::Eval => {
                for &off in &offs {
                    for i in off..off + plane {
                        d_input[i] = scale * grad_out[i];
                    }
                }
            }
        }
    }
    BatchNormGrads {
        input: d_input,
        gamma: d_gamma,
        beta: d_beta,
    }
}

/// Channel concatenation; `a`'s channels come first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
        return Err(Error::dim(format!(
            "concat_channels needs matching N,H,W: {sa} vs {sb}"
        )));
    }
    let out_shape = Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
    let (per_a, per_b) = (sa.c() * sa.plane(), sb.c() * sb.plane());
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..sa.n() {
        out.extend_from_slice(&a.data()[n * per_a..(n + 1) * per_a]);
        out.extend_from_slice(&b.data()[n * per_b..(n + 1) * per_b]);
    }
    Tensor::from_vec(out_shape, out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

const SIGMOID_FLOOR: f32 = f32::EPSILON / 2.0;

/// Logistic sigmoid, saturating one ulp inside `(0, 1)` so outputs never reach
/// either endpoint.
pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|x| (1.0 / (1.0 + (-x).exp())).clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR))
}
