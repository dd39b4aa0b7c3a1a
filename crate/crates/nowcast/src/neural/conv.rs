//! 3x3 same-padding cross-correlation with analytic gradients.
//!
//! Accumulation is in `f64` regardless of the stored scalar width. Inner
//! loops run over contiguous rows so the compiler can vectorize them.

use crate::error::{Error, Result};

use super::real::Real;
use super::tensor::Tensor;

pub const KSIZE: usize = 3;

/// Parameters of one 3x3 convolution layer: kernels laid out
/// `[out_ch][in_ch][3][3]` plus a per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<R> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernels: Vec<R>,
    pub bias: Vec<R>,
}

impl<R: Real> ConvParams<R> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernels: vec![R::zero(); out_ch * in_ch * KSIZE * KSIZE],
            bias: vec![R::zero(); out_ch],
        }
    }

    #[inline(always)]
    pub fn kernel_at(&self, o: usize, i: usize, ky: usize, kx: usize) -> R {
        self.kernels[((o * self.in_ch + i) * KSIZE + ky) * KSIZE + kx]
    }
}

/// Same-padding cross-correlation: `out[o] = sum_i x[i] * k[o,i] + b[o]`.
pub fn conv2d_forward<R: Real>(x: &Tensor<R>, p: &ConvParams<R>) -> Result<Tensor<R>> {
    if x.ch != p.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv input has {} channels, params expect {}",
            x.ch, p.in_ch
        )));
    }
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(p.out_ch, h, w);
    let mut acc = vec![0f64; h * w];
    for o in 0..p.out_ch {
        let b = p.bias[o].to_f64();
        acc.iter_mut().for_each(|v| *v = b);
        for i in 0..p.in_ch {
            let plane = x.plane(i);
            for ky in 0..KSIZE {
                for kx in 0..KSIZE {
                    let wgt = p.kernel_at(o, i, ky, kx).to_f64();
                    if wgt == 0.0 {
                        continue;
                    }
                    accumulate_shifted(&mut acc, plane, h, w, ky, kx, wgt);
                }
            }
        }
        let out_plane = &mut out.data[o * h * w..(o + 1) * h * w];
        for (dst, &v) in out_plane.iter_mut().zip(acc.iter()) {
            *dst = R::from_f64(v);
        }
    }
    Ok(out)
}

/// `acc[y, x] += wgt * src[y + ky - 1, x + kx - 1]` over the valid range.
#[inline]
fn accumulate_shifted<R: Real>(
    acc: &mut [f64],
    src: &[R],
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
    wgt: f64,
) {
    let dy = ky as isize - 1;
    let dx = kx as isize - 1;
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let arow = &mut acc[y * w + x0..y * w + x1];
        let srow = &src[sy * w + (x0 as isize + dx) as usize..];
        for (a, &s) in arow.iter_mut().zip(srow.iter()) {
            *a += wgt * s.to_f64();
        }
    }
}

/// Exact gradients of [`conv2d_forward`] with respect to the input and
/// the parameters.
pub fn conv2d_backward<R: Real>(
    x: &Tensor<R>,
    p: &ConvParams<R>,
    upstream: &Tensor<R>,
) -> Result<(Tensor<R>, ConvParams<R>)> {
    if x.ch != p.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv input has {} channels, params expect {}",
            x.ch, p.in_ch
        )));
    }
    if upstream.ch != p.out_ch || upstream.h != x.h || upstream.w != x.w {
        return Err(Error::ShapeMismatch(format!(
            "upstream shape {}x{}x{} does not match output {}x{}x{}",
            upstream.ch, upstream.h, upstream.w, p.out_ch, x.h, x.w
        )));
    }
    let (h, w) = (x.h, x.w);
    let mut grad_x = Tensor::zeros(p.in_ch, h, w);
    let mut grads = ConvParams::zeros(p.in_ch, p.out_ch);
    let mut gx_acc = vec![0f64; h * w];

    // d/dx: transposed correlation of the upstream with the kernels.
    for i in 0..p.in_ch {
        gx_acc.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..p.out_ch {
            let up = upstream.plane(o);
            for ky in 0..KSIZE {
                for kx in 0..KSIZE {
                    let wgt = p.kernel_at(o, i, ky, kx).to_f64();
                    if wgt == 0.0 {
                        continue;
                    }
                    // gx[sy, sx] += wgt * up[sy - (ky-1), sx - (kx-1)]
                    // i.e. the mirrored shift of the forward pass.
                    accumulate_shifted(&mut gx_acc, up, h, w, 2 - ky, 2 - kx, wgt);
                }
            }
        }
        let plane = &mut grad_x.data[i * h * w..(i + 1) * h * w];
        for (dst, &v) in plane.iter_mut().zip(gx_acc.iter()) {
            *dst = R::from_f64(v);
        }
    }

    // d/dk and d/db.
    for o in 0..p.out_ch {
        let up = upstream.plane(o);
        let gb: f64 = up.iter().map(|&v| v.to_f64()).sum();
        grads.bias[o] = R::from_f64(gb);
        for i in 0..p.in_ch {
            let xp = x.plane(i);
            for ky in 0..KSIZE {
                for kx in 0..KSIZE {
                    let dy = ky as isize - 1;
                    let dx = kx as isize - 1;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize).min(h as isize - dy) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize).min(w as isize - dx) as usize;
                    let mut sum = 0f64;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let urow = &up[y * w + x0..y * w + x1];
                        let xrow = &xp[sy * w + (x0 as isize + dx) as usize..];
                        for (&u, &xv) in urow.iter().zip(xrow.iter()) {
                            sum += u.to_f64() * xv.to_f64();
                        }
                    }
                    grads.kernels[((o * p.in_ch + i) * KSIZE + ky) * KSIZE + kx] =
                        R::from_f64(sum);
                }
            }
        }
    }

    Ok((grad_x, grads))
}
