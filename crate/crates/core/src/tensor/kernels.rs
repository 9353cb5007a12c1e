//! Forward and backward kernels over plain tensors.
//!
//! The forward functions are usable on their own; the `*_backward` companions
//! are what [`Graph`](super::Graph) calls during reverse-mode differentiation.

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Epsilon added under the square root in batch and instance normalization.
pub const NORM_EPS: f32 = 1e-5;

/// Transposed convolution geometry: every deconvolution doubles resolution.
pub const DECONV_KERNEL: usize = 4;
pub const DECONV_STRIDE: usize = 2;
pub const DECONV_PADDING: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpsampleMode {
    Nearest,
    /// Half-pixel centers: output pixel `o` samples input coordinate
    /// `(o + 0.5) / 2 - 0.5`, clamped to the edge.
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormMode {
    Batch,
    Instance,
    None,
}

pub(crate) fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::shape(op, format!("expected an N×C×H×W tensor, got shape {s:?}"))),
    }
}

/// Output positions `o` in `0..out` with `0 <= o·s + kk − p < len`.
fn valid_range(out: usize, len: usize, kk: usize, s: usize, p: usize) -> std::ops::Range<usize> {
    let lo = if p > kk { (p - kk).div_ceil(s) } else { 0 };
    let hi = if len + p > kk { ((len + p - kk - 1) / s + 1).min(out) } else { 0 };
    lo..hi.max(lo)
}

/// Unfold `x` (`n×c×h×w`) into a `(c·k·k) × (n·oh·ow)` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], n: usize, c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, oh: usize, ow: usize) -> Vec<f32> {
    let cols = n * oh * ow;
    let mut out = vec![0.0f32; c * k * k * cols];
    for ci in 0..c {
        for ky in 0..k {
            let ys = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let xs = valid_range(ow, w, kx, s, p);
                if xs.is_empty() {
                    continue;
                }
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                let ix0 = xs.start * s + kx - p;
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    let dst = &mut dst_row[ni * oh * ow..(ni + 1) * oh * ow];
                    for oy in ys.clone() {
                        let iy = oy * s + ky - p;
                        let src_row = &plane[iy * w..(iy + 1) * w];
                        let d = &mut dst[oy * ow + xs.start..oy * ow + xs.end];
                        if s == 1 {
                            d.copy_from_slice(&src_row[ix0..ix0 + d.len()]);
                        } else {
                            for (j, v) in d.iter_mut().enumerate() {
                                *v = src_row[ix0 + j * s];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-accumulate patches back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f32], n: usize, c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, oh: usize, ow: usize) -> Vec<f32> {
    let cols = n * oh * ow;
    let mut x = vec![0.0f32; n * c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            let ys = valid_range(oh, h, ky, s, p);
            for kx in 0..k {
                let xs = valid_range(ow, w, kx, s, p);
                if xs.is_empty() {
                    continue;
                }
                let row = (ci * k + ky) * k + kx;
                let src_row = &col[row * cols..(row + 1) * cols];
                let ix0 = xs.start * s + kx - p;
                for ni in 0..n {
                    let plane = &mut x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    let src = &src_row[ni * oh * ow..(ni + 1) * oh * ow];
                    for oy in ys.clone() {
                        let iy = oy * s + ky - p;
                        let dst_row = &mut plane[iy * w..(iy + 1) * w];
                        let sv = &src[oy * ow + xs.start..oy * ow + xs.end];
                        if s == 1 {
                            for (d, v) in dst_row[ix0..ix0 + sv.len()].iter_mut().zip(sv) {
                                *d += v;
                            }
                        } else {
                            for (j, v) in sv.iter().enumerate() {
                                dst_row[ix0 + j * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `n×c×L` → `c×(n·L)`.
fn batch_to_channel_major(x: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * l + ni * l..ci * n * l + (ni + 1) * l].copy_from_slice(&x[(ni * c + ci) * l..(ni * c + ci + 1) * l]);
        }
    }
    out
}

/// `c×(n·L)` → `n×c×L`, adding an optional per-channel bias.
fn channel_major_to_batch(m: &[f32], n: usize, c: usize, l: usize, bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = vec![0.0; m.len()];
    for ni in 0..n {
        for ci in 0..c {
            let b = bias.map_or(0.0, |b| b[ci]);
            let src = &m[ci * n * l + ni * l..ci * n * l + (ni + 1) * l];
            let dst = &mut out[(ni * c + ci) * l..(ni * c + ci + 1) * l];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

fn channel_sums(g: &[f32], n: usize, c: usize, l: usize) -> Vec<f32> {
    let mut db = vec![0.0; c];
    for ni in 0..n {
        for (ci, acc) in db.iter_mut().enumerate() {
            *acc += g[(ni * c + ci) * l..(ni * c + ci + 1) * l].iter().sum::<f32>();
        }
    }
    db
}

struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<ConvGeom> {
    let (n, c_in, h, w) = dims4(input, "conv2d")?;
    let [c_out, wi, k, k2] = *weight.shape() else {
        return Err(Error::shape("conv2d", format!("weight must be O×I×k×k, got {:?}", weight.shape())));
    };
    if wi != c_in {
        return Err(Error::shape("conv2d", format!("input channels {c_in} (axis 1) != weight input channels {wi} (axis 1)")));
    }
    if k != k2 {
        return Err(Error::shape("conv2d", format!("non-square kernel {k}×{k2} (axes 2, 3)")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be at least 1"));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d", format!("bias shape {:?} != [{c_out}]", b.shape())));
        }
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape("conv2d", format!("kernel {k} larger than padded input {h}×{w}")));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    Ok(ConvGeom { n, c_in, h, w, c_out, k, oh, ow })
}

/// 2-D cross-correlation of an `N×I×H×W` batch with an `O×I×k×k` kernel.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    conv2d_opt(input, weight, Some(bias), stride, padding)
}

pub(crate) fn conv2d_opt(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geom(input, weight, bias, stride, padding)?;
    let l = g.oh * g.ow;
    let ck = g.c_in * g.k * g.k;
    let col = im2col(input.data(), g.n, g.c_in, g.h, g.w, g.k, stride, padding, g.oh, g.ow);
    let mut out_m = vec![0.0; g.c_out * g.n * l];
    gemm(g.c_out, ck, g.n * l, 1.0, weight.data(), false, &col, false, 0.0, &mut out_m);
    let out = channel_major_to_batch(&out_m, g.n, g.c_out, l, bias.map(Tensor::data));
    Tensor::new(vec![g.n, g.c_out, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geom(input, weight, None, stride, padding)?;
    let l = g.oh * g.ow;
    let ck = g.c_in * g.k * g.k;
    let gout_m = batch_to_channel_major(grad_out.data(), g.n, g.c_out, l);
    let col = im2col(input.data(), g.n, g.c_in, g.h, g.w, g.k, stride, padding, g.oh, g.ow);
    let mut dw = vec![0.0; g.c_out * ck];
    gemm(g.c_out, g.n * l, ck, 1.0, &gout_m, false, &col, true, 0.0, &mut dw);
    let mut dcol = col;
    gemm(ck, g.c_out, g.n * l, 1.0, weight.data(), true, &gout_m, false, 0.0, &mut dcol);
    let dx = col2im(&dcol, g.n, g.c_in, g.h, g.w, g.k, stride, padding, g.oh, g.ow);
    let db = channel_sums(grad_out.data(), g.n, g.c_out, l);
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![g.c_out], db)?,
    ))
}

fn deconv_geom(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c_in, h, w) = dims4(input, "transposed_conv2d")?;
    let [wi, c_out, k, k2] = *weight.shape() else {
        return Err(Error::shape("transposed_conv2d", format!("weight must be I×O×4×4, got {:?}", weight.shape())));
    };
    if wi != c_in {
        return Err(Error::shape("transposed_conv2d", format!("input channels {c_in} (axis 1) != weight axis 0 ({wi})")));
    }
    if k != DECONV_KERNEL || k2 != DECONV_KERNEL {
        return Err(Error::shape("transposed_conv2d", format!("kernel must be 4×4, got {k}×{k2}")));
    }
    Ok((n, c_in, h, w, c_out))
}

/// Stride-2 transposed convolution with a fixed 4×4 kernel and padding 1.
/// Weight layout is `I×O×4×4`; output resolution is exactly `2H×2W`.
pub fn transposed_conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c_in, h, w, c_out) = deconv_geom(input, weight)?;
    if bias.shape() != [c_out] {
        return Err(Error::shape("transposed_conv2d", format!("bias shape {:?} != [{c_out}]", bias.shape())));
    }
    let l = h * w;
    let kk = c_out * DECONV_KERNEL * DECONV_KERNEL;
    let x_m = batch_to_channel_major(input.data(), n, c_in, l);
    let mut col = vec![0.0; kk * n * l];
    gemm(kk, c_in, n * l, 1.0, weight.data(), true, &x_m, false, 0.0, &mut col);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = col2im(&col, n, c_out, oh, ow, DECONV_KERNEL, DECONV_STRIDE, DECONV_PADDING, h, w);
    for ni in 0..n {
        for ci in 0..c_out {
            let b = bias.data()[ci];
            out[(ni * c_out + ci) * oh * ow..(ni * c_out + ci + 1) * oh * ow].iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

pub fn transposed_conv2d_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c_in, h, w, c_out) = deconv_geom(input, weight)?;
    let l = h * w;
    let kk = c_out * DECONV_KERNEL * DECONV_KERNEL;
    let (oh, ow) = (2 * h, 2 * w);
    let dcol = im2col(grad_out.data(), n, c_out, oh, ow, DECONV_KERNEL, DECONV_STRIDE, DECONV_PADDING, h, w);
    let mut dx_m = vec![0.0; c_in * n * l];
    gemm(c_in, kk, n * l, 1.0, weight.data(), false, &dcol, false, 0.0, &mut dx_m);
    let dx = channel_major_to_batch(&dx_m, n, c_in, l, None);
    let x_m = batch_to_channel_major(input.data(), n, c_in, l);
    let mut dw = vec![0.0; c_in * kk];
    gemm(c_in, n * l, kk, 1.0, &x_m, false, &dcol, true, 0.0, &mut dw);
    let db = channel_sums(grad_out.data(), n, c_out, oh * ow);
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weight.shape().to_vec(), dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}

/// Per output coordinate: (low source index, high source index, low weight, high weight).
fn upsample_axis(len: usize, mode: UpsampleMode) -> Vec<(usize, usize, f32, f32)> {
    (0..2 * len)
        .map(|o| match mode {
            UpsampleMode::Nearest => (o / 2, o / 2, 1.0, 0.0),
            UpsampleMode::Bilinear => {
                let src = ((o as f32 + 0.5) * 0.5 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(len - 1);
                let i1 = (i0 + 1).min(len - 1);
                let frac = src - i0 as f32;
                (i0, i1, 1.0 - frac, frac)
            }
        })
        .collect()
}

/// ×2 spatial upsampling.
pub fn upsample(input: &Tensor, mode: UpsampleMode) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "upsample")?;
    if h == 0 || w == 0 {
        return Err(Error::shape("upsample", "spatial dimensions must be at least 1"));
    }
    let ty = upsample_axis(h, mode);
    let tx = upsample_axis(w, mode);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * oh * ow];
    for (plane_in, plane_out) in input.data().chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                plane_out[oy * ow + ox] = wy0 * (wx0 * plane_in[y0 * w + x0] + wx1 * plane_in[y0 * w + x1])
                    + wy1 * (wx0 * plane_in[y1 * w + x0] + wx1 * plane_in[y1 * w + x1]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn upsample_backward(input_shape: &[usize], grad_out: &Tensor, mode: UpsampleMode) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("upsample", "expected 4-D input shape"));
    };
    let ty = upsample_axis(h, mode);
    let tx = upsample_axis(w, mode);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; n * c * h * w];
    for (plane_in, plane_out) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(oh * ow)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let g = plane_out[oy * ow + ox];
                plane_in[y0 * w + x0] += wy0 * wx0 * g;
                plane_in[y0 * w + x1] += wy0 * wx1 * g;
                plane_in[y1 * w + x0] += wy1 * wx0 * g;
                plane_in[y1 * w + x1] += wy1 * wx1 * g;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Saved forward quantities for [`normalize_backward`].
#[derive(Clone, Debug)]
pub struct NormCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Batch, instance or no normalization followed by a per-channel affine map.
///
/// The generator supernet switches architectures every step, so batch mode
/// always uses the statistics of the batch at hand; `training` only controls
/// whether a single-sample batch is rejected.
pub fn normalize(input: &Tensor, mode: NormMode, gamma: &Tensor, beta: &Tensor, training: bool) -> Result<Tensor> {
    Ok(normalize_forward(input, mode, gamma, beta, training)?.0)
}

pub fn normalize_forward(
    input: &Tensor,
    mode: NormMode,
    gamma: &Tensor,
    beta: &Tensor,
    training: bool,
) -> Result<(Tensor, Option<NormCache>)> {
    let (n, c, h, w) = dims4(input, "normalize")?;
    if mode == NormMode::None {
        return Ok((input.clone(), None));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "normalize",
            format!("gamma {:?} / beta {:?} must have length {c}", gamma.shape(), beta.shape()),
        ));
    }
    if mode == NormMode::Batch && training && n < 2 {
        return Err(Error::DegenerateBatch(format!("batch normalization in training needs N >= 2, got N = {n}")));
    }
    let l = h * w;
    let groups = if mode == NormMode::Batch { c } else { n * c };
    let group_of = |ni: usize, ci: usize| if mode == NormMode::Batch { ci } else { ni * c + ci };
    let count = if mode == NormMode::Batch { (n * l) as f32 } else { l as f32 };
    let x = input.data();
    let mut mean = vec![0.0f32; groups];
    for ni in 0..n {
        for ci in 0..c {
            mean[group_of(ni, ci)] += x[(ni * c + ci) * l..(ni * c + ci + 1) * l].iter().sum::<f32>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f32; groups];
    for ni in 0..n {
        for ci in 0..c {
            let g = group_of(ni, ci);
            var[g] += x[(ni * c + ci) * l..(ni * c + ci + 1) * l].iter().map(|v| (v - mean[g]) * (v - mean[g])).sum::<f32>();
        }
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v / count + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let g = group_of(ni, ci);
            let (gm, bt) = (gamma.data()[ci], beta.data()[ci]);
            for i in (ni * c + ci) * l..(ni * c + ci + 1) * l {
                xhat[i] = (x[i] - mean[g]) * inv_std[g];
                out[i] = gm * xhat[i] + bt;
            }
        }
    }
    Ok((Tensor::new(input.shape().to_vec(), out)?, Some(NormCache { xhat, inv_std })))
}

/// Gradients with respect to input, gamma and beta.
pub fn normalize_backward(
    shape: &[usize],
    mode: NormMode,
    gamma: &Tensor,
    cache: &NormCache,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::shape("normalize", "expected 4-D input shape"));
    };
    let l = h * w;
    let groups = if mode == NormMode::Batch { c } else { n * c };
    let group_of = |ni: usize, ci: usize| if mode == NormMode::Batch { ci } else { ni * c + ci };
    let count = if mode == NormMode::Batch { (n * l) as f32 } else { l as f32 };
    let dy = grad_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut sum_d = vec![0.0f32; groups];
    let mut sum_dx = vec![0.0f32; groups];
    for ni in 0..n {
        for ci in 0..c {
            let g = group_of(ni, ci);
            let gm = gamma.data()[ci];
            for i in (ni * c + ci) * l..(ni * c + ci + 1) * l {
                dgamma[ci] += dy[i] * cache.xhat[i];
                dbeta[ci] += dy[i];
                let dxhat = dy[i] * gm;
                sum_d[g] += dxhat;
                sum_dx[g] += dxhat * cache.xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for ni in 0..n {
        for ci in 0..c {
            let g = group_of(ni, ci);
            let gm = gamma.data()[ci];
            let (md, mdx) = (sum_d[g] / count, sum_dx[g] / count);
            for i in (ni * c + ci) * l..(ni * c + ci + 1) * l {
                dx[i] = cache.inv_std[g] * (dy[i] * gm - md - cache.xhat[i] * mdx);
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// 2×2 average pooling with stride 2 (odd trailing rows/columns dropped).
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input, "avg_pool2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::shape("avg_pool2", format!("input {h}×{w} too small to pool")));
    }
    let mut out = vec![0.0; n * c * oh * ow];
    for (pi, po) in input.data().chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for y in 0..oh {
            for x in 0..ow {
                po[y * ow + x] = 0.25 * (pi[2 * y * w + 2 * x] + pi[2 * y * w + 2 * x + 1] + pi[(2 * y + 1) * w + 2 * x] + pi[(2 * y + 1) * w + 2 * x + 1]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avg_pool2_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(Error::shape("avg_pool2", "expected 4-D input shape"));
    };
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for (pi, po) in dx.chunks_exact_mut(h * w).zip(grad_out.data().chunks_exact(oh * ow)) {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * po[y * ow + x];
                pi[2 * y * w + 2 * x] += g;
                pi[2 * y * w + 2 * x + 1] += g;
                pi[(2 * y + 1) * w + 2 * x] += g;
                pi[(2 * y + 1) * w + 2 * x + 1] += g;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `x · Wᵀ + b` for `x: N×in`, `W: out×in`, `b: out`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, d_in, d_out) = linear_dims(x, weight)?;
    let mut out = vec![0.0; n * d_out];
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::shape("linear", format!("bias shape {:?} != [{d_out}]", b.shape())));
        }
        for row in out.chunks_exact_mut(d_out) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(n, d_in, d_out, 1.0, x.data(), false, weight.data(), true, 1.0, &mut out);
    Tensor::new(vec![n, d_out], out)
}

pub(crate) fn linear_dims(x: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, d_in] = *x.shape() else {
        return Err(Error::shape("linear", format!("input must be 2-D, got {:?}", x.shape())));
    };
    let [d_out, w_in] = *weight.shape() else {
        return Err(Error::shape("linear", format!("weight must be 2-D, got {:?}", weight.shape())));
    };
    if w_in != d_in {
        return Err(Error::shape("linear", format!("input features {d_in} (axis 1) != weight axis 1 ({w_in})")));
    }
    Ok((n, d_in, d_out))
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d_in, d_out) = linear_dims(x, weight)?;
    let mut dx = vec![0.0; n * d_in];
    gemm(n, d_out, d_in, 1.0, grad_out.data(), false, weight.data(), false, 0.0, &mut dx);
    let mut dw = vec![0.0; d_out * d_in];
    gemm(d_out, n, d_in, 1.0, grad_out.data(), true, x.data(), false, 0.0, &mut dw);
    let mut db = vec![0.0; d_out];
    for row in grad_out.data().chunks_exact(d_out) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok((
        Tensor::new(vec![n, d_in], dx)?,
        Tensor::new(vec![d_out, d_in], dw)?,
        Tensor::new(vec![d_out], db)?,
    ))
}
