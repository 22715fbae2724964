//! 2-D convolution as patch-matrix expansion followed by a GEMM.
//!
//! Activations are made channel-last and every output pixel of the batch
//! becomes one row of a patch matrix, so a convolution is a single matrix
//! product with the reordered kernel. The summation order is fixed by that
//! product and does not depend on the thread count.

use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use super::tape::{Backward, BackwardCtx, Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Sliding-window geometry over a channel-last image.
#[derive(Clone, Copy, Debug)]
struct Window {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_y: usize,
    pad_x: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.c
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_y == 0 && self.pad_x == 0
    }

    /// Input row for output row `oy` and kernel row `i`, if inside.
    fn src_row(&self, oy: usize, i: usize) -> Option<usize> {
        let y = (oy * self.stride + i).checked_sub(self.pad_y)?;
        (y < self.h).then_some(y)
    }

    /// Kernel columns `lo..hi` that land inside the image for output column
    /// `ox`, and the input column of kernel column `lo`.
    fn col_span(&self, ox: usize) -> (usize, usize, usize) {
        let start = ox * self.stride;
        let lo = self.pad_x.saturating_sub(start).min(self.kw);
        let hi = (self.w + self.pad_x).saturating_sub(start).min(self.kw).max(lo);
        if hi == lo {
            // the whole window sits in the padding
            return (lo, lo, 0);
        }
        (lo, hi, (start + lo).saturating_sub(self.pad_x))
    }

    /// Patch rows of a channel-last batch; columns ordered (ky, kx, channel).
    fn im2row(&self, n: usize, x: &[f32]) -> Vec<f32> {
        if self.is_identity() {
            return x.to_vec();
        }
        let q = self.patch_len();
        let mut rows = vec![0.0f32; n * self.oh * self.ow * q];
        if rows.is_empty() {
            return rows;
        }
        let c = self.c;
        rows.par_chunks_mut(self.ow * q).enumerate().for_each(|(r, block)| {
            let xs = &x[(r / self.oh) * self.in_len()..][..self.in_len()];
            let oy = r % self.oh;
            for (ox, dst) in block.chunks_mut(q).enumerate() {
                let (lo, hi, x0) = self.col_span(ox);
                for (i, seg) in dst.chunks_mut(self.kw * c).enumerate() {
                    let Some(iy) = self.src_row(oy, i) else { continue };
                    let src = &xs[(iy * self.w + x0) * c..][..(hi - lo) * c];
                    seg[lo * c..hi * c].copy_from_slice(src);
                }
            }
        });
        rows
    }

    /// Adjoint of [`Window::im2row`]: scatter-adds patch rows into a
    /// channel-last image batch.
    fn row2im(&self, n: usize, rows: &[f32]) -> Vec<f32> {
        let q = self.patch_len();
        let c = self.c;
        let mut dx = vec![0.0f32; n * self.in_len()];
        if dx.is_empty() {
            return dx;
        }
        dx.par_chunks_mut(self.in_len()).enumerate().for_each(|(s, dxs)| {
            let sample_rows = &rows[s * self.oh * self.ow * q..][..self.oh * self.ow * q];
            for (p, src) in sample_rows.chunks(q).enumerate() {
                let (oy, ox) = (p / self.ow, p % self.ow);
                let (lo, hi, x0) = self.col_span(ox);
                for (i, seg) in src.chunks(self.kw * c).enumerate() {
                    let Some(iy) = self.src_row(oy, i) else { continue };
                    let dst = &mut dxs[(iy * self.w + x0) * c..][..(hi - lo) * c];
                    for (d, g) in dst.iter_mut().zip(&seg[lo * c..hi * c]) {
                        *d += g;
                    }
                }
            }
        });
        dx
    }
}

/// N×C×(hw) → N×(hw)×C.
fn to_channel_last(data: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * c * hw];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(c * hw)
        .zip(data.par_chunks(c * hw))
        .for_each(|(dst, src)| {
            for (ch, plane) in src.chunks(hw).enumerate() {
                for (p, &v) in plane.iter().enumerate() {
                    dst[p * c + ch] = v;
                }
            }
        });
    out
}

/// N×(hw)×C → N×C×(hw).
fn to_channel_first(data: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * c * hw];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(c * hw)
        .zip(data.par_chunks(c * hw))
        .for_each(|(dst, src)| {
            for (p, px) in src.chunks(c).enumerate() {
                for (ch, &v) in px.iter().enumerate() {
                    dst[ch * hw + p] = v;
                }
            }
        });
    out
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    k: usize,
    win: Window,
}

impl Geom {
    fn new(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = x.dims4()?;
        let [k, wc, kh, kw] = weight.dims4()?;
        if wc != c {
            return Err(Error::dim(format!(
                "conv2d weight expects {wc} input channels, input has {c}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be at least 1"));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [k] {
                return Err(Error::dim(format!(
                    "conv2d bias shape {:?}, expected [{k}]",
                    b.shape()
                )));
            }
        }
        Ok(Geom {
            n,
            k,
            win: Window {
                h,
                w,
                c,
                kh,
                kw,
                stride,
                pad_y: pad,
                pad_x: pad,
                oh: (h + 2 * pad - kh) / stride + 1,
                ow: (w + 2 * pad - kw) / stride + 1,
            },
        })
    }

    fn out_len(&self) -> usize {
        self.win.oh * self.win.ow
    }

    /// Window of the input-gradient convolution (flipped kernel over the
    /// output gradient), available for unit stride.
    fn transposed(&self) -> Option<Window> {
        let win = self.win;
        (win.stride == 1 && win.pad_y < win.kh && win.pad_x < win.kw).then(|| Window {
            h: win.oh,
            w: win.ow,
            c: self.k,
            kh: win.kh,
            kw: win.kw,
            stride: 1,
            pad_y: win.kh - 1 - win.pad_y,
            pad_x: win.kw - 1 - win.pad_x,
            oh: win.h,
            ow: win.w,
        })
    }
}

/// Kernel as K × (ky, kx, channel), matching the patch-row column order.
fn kernel_rows(weight: &[f32], k: usize, c: usize, kh: usize, kw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; weight.len()];
    for kk in 0..k {
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    out[kk * kh * kw * c + (i * kw + j) * c + ch] = weight[((kk * c + ch) * kh + i) * kw + j];
                }
            }
        }
    }
    out
}

/// Flipped kernel as (ky, kx, out channel) × in channel.
fn flipped_kernel(weight: &[f32], k: usize, c: usize, kh: usize, kw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; weight.len()];
    for kk in 0..k {
        for ch in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = ((kh - 1 - i) * kw + (kw - 1 - j)) * k + kk;
                    out[row * c + ch] = weight[((kk * c + ch) * kh + i) * kw + j];
                }
            }
        }
    }
    out
}

fn forward_with_rows(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f32>)> {
    let g = Geom::new(x, weight, bias, stride, pad)?;
    let win = g.win;
    let (n, p, q) = (g.n, g.out_len(), win.patch_len());
    let x_cl = to_channel_last(x.data(), n, win.c, win.h * win.w);
    let rows = win.im2row(n, &x_cl);
    let w_rows = kernel_rows(weight.data(), g.k, win.c, win.kh, win.kw);
    let mut y = vec![0.0f32; n * p * g.k];
    if let Some(b) = bias {
        for px in y.chunks_mut(g.k.max(1)) {
            px.copy_from_slice(b.data());
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(
        n * p,
        q,
        g.k,
        MatRef::rows(&rows, q),
        MatRef::transposed(&w_rows, q),
        beta,
        &mut y,
    );
    let out = Tensor::new(&[n, g.k, win.oh, win.ow], to_channel_first(&y, n, g.k, p))?;
    Ok((out, rows))
}

/// Forward convolution with zero padding. `bias` may be omitted.
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    forward_with_rows(x, weight, bias, stride, pad).map(|(out, _)| out)
}

struct Conv2dBackward {
    geom: Geom,
    has_bias: bool,
    /// Patch rows from the forward pass; empty when the kernel is frozen.
    rows: Vec<f32>,
}

impl Backward for Conv2dBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Vec<f32>>>> {
        let g = self.geom;
        let win = g.win;
        let (n, k, c, kh, kw) = (g.n, g.k, win.c, win.kh, win.kw);
        let np = n * g.out_len();
        let q = win.patch_len();
        let weight = ctx.inputs[1].data();
        let need_b = self.has_bias && ctx.needs[2];
        let dy = to_channel_last(ctx.grad, n, k, g.out_len());

        let dw = ctx.needs[1].then(|| {
            let mut dw_rows = vec![0.0f32; k * q];
            gemm(k, np, q, MatRef::transposed(&dy, k), MatRef::rows(&self.rows, q), 0.0, &mut dw_rows);
            let mut dw = vec![0.0f32; k * q];
            for kk in 0..k {
                for ch in 0..c {
                    for ij in 0..kh * kw {
                        dw[(kk * c + ch) * kh * kw + ij] = dw_rows[kk * q + ij * c + ch];
                    }
                }
            }
            dw
        });
        let db = need_b.then(|| {
            let mut acc = vec![0.0f64; k];
            for px in dy.chunks(k.max(1)) {
                acc.iter_mut().zip(px).for_each(|(a, &v)| *a += v as f64);
            }
            acc.into_iter().map(|v| v as f32).collect::<Vec<_>>()
        });
        let dx = ctx.needs[0].then(|| {
            let hw = win.h * win.w;
            let dx_cl = match g.transposed() {
                Some(twin) => {
                    let rows = twin.im2row(n, &dy);
                    let flipped = flipped_kernel(weight, k, c, kh, kw);
                    let mut dx = vec![0.0f32; n * hw * c];
                    gemm(n * hw, twin.patch_len(), c, MatRef::rows(&rows, twin.patch_len()), MatRef::rows(&flipped, c), 0.0, &mut dx);
                    dx
                }
                None => {
                    let w_rows = kernel_rows(weight, k, c, kh, kw);
                    let mut drows = vec![0.0f32; np * q];
                    gemm(np, k, q, MatRef::rows(&dy, k), MatRef::rows(&w_rows, q), 0.0, &mut drows);
                    win.row2im(n, &drows)
                }
            };
            to_channel_first(&dx_cl, n, c, hw)
        });
        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(db);
        }
        Ok(out)
    }
}

impl Tape {
    /// Zero-padded 2-D convolution of an N×C×H×W input with a K×C×kh×kw kernel.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = Geom::new(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let (out, rows) = forward_with_rows(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let op = Box::new(Conv2dBackward {
            geom,
            has_bias: bias.is_some(),
            rows: if self.requires_grad(weight) { rows } else { Vec::new() },
        });
        match bias {
            Some(b) => self.push(out, &[x, weight, b], op),
            None => self.push(out, &[x, weight], op),
        }
    }
}
