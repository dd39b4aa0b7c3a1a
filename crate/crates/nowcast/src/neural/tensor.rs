//! Channel-major dense activation tensor (C x H x W).

use crate::error::{Error, Result};
use crate::grid::{Field2D, Unit};

use super::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub ch: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(ch: usize, h: usize, w: usize) -> Self {
        Self { ch, h, w, data: vec![R::zero(); ch * h * w] }
    }

    pub fn from_vec(ch: usize, h: usize, w: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != ch * h * w {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} != {}x{}x{}",
                data.len(),
                ch,
                h,
                w
            )));
        }
        Ok(Self { ch, h, w, data })
    }

    /// Single-channel tensor from a field.
    pub fn from_field(f: &Field2D) -> Self {
        Self {
            ch: 1,
            h: f.rows(),
            w: f.cols(),
            data: f.data().iter().map(|&v| R::from_f64(v as f64)).collect(),
        }
    }

    /// Single-channel tensor back to a field.
    pub fn to_field(&self, unit: Unit) -> Result<Field2D> {
        if self.ch != 1 {
            return Err(Error::ShapeMismatch(format!(
                "to_field on {}-channel tensor",
                self.ch
            )));
        }
        Field2D::new(
            self.h,
            self.w,
            unit,
            self.data.iter().map(|&v| v.to_f64() as f32).collect(),
        )
    }

    #[inline(always)]
    pub fn plane(&self, c: usize) -> &[R] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.ch == other.ch && self.h == other.h && self.w == other.w
    }

    /// Concatenate along the channel axis; shapes must match spatially.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.h != b.h || a.w != b.w {
            return Err(Error::ShapeMismatch(format!(
                "concat of {}x{} with {}x{}",
                a.h, a.w, b.h, b.w
            )));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self { ch: a.ch + b.ch, h: a.h, w: a.w, data })
    }

    /// Split the leading `head_ch` channels off, returning (head, tail).
    pub fn split_channels(&self, head_ch: usize) -> (Self, Self) {
        let plane = self.h * self.w;
        let head = Self {
            ch: head_ch,
            h: self.h,
            w: self.w,
            data: self.data[..head_ch * plane].to_vec(),
        };
        let tail = Self {
            ch: self.ch - head_ch,
            h: self.h,
            w: self.w,
            data: self.data[head_ch * plane..].to_vec(),
        };
        (head, tail)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            ch: self.ch,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| R::from_f64(f(v.to_f64()))).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            ch: self.ch,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| R::from_f64(f(a.to_f64(), b.to_f64())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = R::from_f64(a.to_f64() + b.to_f64());
        }
    }
}

pub fn relu<R: Real>(t: &Tensor<R>) -> Tensor<R> {
    t.map(|v| v.max(0.0))
}

/// ReLU gradient gated on the forward output (out > 0 iff pre > 0).
pub fn relu_backward<R: Real>(out: &Tensor<R>, upstream: &Tensor<R>) -> Tensor<R> {
    out.zip(upstream, |o, u| if o > 0.0 { u } else { 0.0 })
}

pub fn sigmoid<R: Real>(t: &Tensor<R>) -> Tensor<R> {
    t.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn tanh<R: Real>(t: &Tensor<R>) -> Tensor<R> {
    t.map(|v| v.tanh())
}
