//! Convolutional recurrent cells: ConvGRU and ConvLSTM steps with
//! analytic backward passes.
//!
//! Gate transforms are 3x3 same-padding convolutions over the channel
//! concatenation of the input and the hidden state:
//!
//! ConvGRU:  z = sig(Wz*[x;h]), r = sig(Wr*[x;h]),
//!           h~ = tanh(Wc*[x; r.h]), h' = (1-z).h + z.h~
//! ConvLSTM: i,f,o = sig(W*[x;h]), g = tanh(Wg*[x;h]),
//!           c' = f.c + i.g, h' = o.tanh(c')

use crate::error::{Error, Result};

use super::conv::{conv2d_backward, conv2d_forward, ConvParams};
use super::real::Real;
use super::tensor::{sigmoid, tanh, Tensor};

/// Gate convolutions of one ConvGRU cell. Each maps `x_ch + h_ch`
/// channels to `h_ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<R> {
    pub x_ch: usize,
    pub h_ch: usize,
    pub update: ConvParams<R>,
    pub reset: ConvParams<R>,
    pub candidate: ConvParams<R>,
}

impl<R: Real> GruParams<R> {
    pub fn zeros(x_ch: usize, h_ch: usize) -> Self {
        Self {
            x_ch,
            h_ch,
            update: ConvParams::zeros(x_ch + h_ch, h_ch),
            reset: ConvParams::zeros(x_ch + h_ch, h_ch),
            candidate: ConvParams::zeros(x_ch + h_ch, h_ch),
        }
    }
}

/// Forward intermediates needed by the backward pass.
pub struct GruCache<R> {
    pub xh: Tensor<R>,
    pub xrh: Tensor<R>,
    pub h_prev: Tensor<R>,
    pub z: Tensor<R>,
    pub r: Tensor<R>,
    pub cand: Tensor<R>,
}

fn check_cell_shapes<R: Real>(
    x: &Tensor<R>,
    h: &Tensor<R>,
    x_ch: usize,
    h_ch: usize,
) -> Result<()> {
    if x.ch != x_ch || h.ch != h_ch || x.h != h.h || x.w != h.w {
        return Err(Error::ShapeMismatch(format!(
            "cell step got x {}x{}x{}, h {}x{}x{}, expected {x_ch}/{h_ch} channels",
            x.ch, x.h, x.w, h.ch, h.h, h.w
        )));
    }
    Ok(())
}

/// One ConvGRU step, returning the next hidden state and the cache.
pub fn gru_forward<R: Real>(
    x: &Tensor<R>,
    h: &Tensor<R>,
    p: &GruParams<R>,
) -> Result<(Tensor<R>, GruCache<R>)> {
    check_cell_shapes(x, h, p.x_ch, p.h_ch)?;
    let xh = Tensor::concat_channels(x, h)?;
    let z = sigmoid(&conv2d_forward(&xh, &p.update)?);
    let r = sigmoid(&conv2d_forward(&xh, &p.reset)?);
    let rh = r.zip(h, |a, b| a * b);
    let xrh = Tensor::concat_channels(x, &rh)?;
    let cand = tanh(&conv2d_forward(&xrh, &p.candidate)?);
    let h_next = {
        let mut out = Tensor::zeros(p.h_ch, x.h, x.w);
        for idx in 0..out.data.len() {
            let zv = z.data[idx].to_f64();
            out.data[idx] = R::from_f64(
                (1.0 - zv) * h.data[idx].to_f64() + zv * cand.data[idx].to_f64(),
            );
        }
        out
    };
    Ok((h_next, GruCache { xh, xrh, h_prev: h.clone(), z, r, cand }))
}

/// One ConvGRU step without keeping intermediates.
pub fn gru_step<R: Real>(x: &Tensor<R>, h: &Tensor<R>, p: &GruParams<R>) -> Result<Tensor<R>> {
    Ok(gru_forward(x, h, p)?.0)
}

/// Backward through one ConvGRU step. Returns gradients with respect to
/// the input, the previous hidden state, and the cell parameters.
pub fn gru_backward<R: Real>(
    p: &GruParams<R>,
    cache: &GruCache<R>,
    dh_next: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>, GruParams<R>)> {
    let h = &cache.h_prev;
    let dz = cache
        .cand
        .zip(h, |c, hv| c - hv)
        .zip(dh_next, |d, u| d * u);
    let dcand = cache.z.zip(dh_next, |z, u| z * u);
    let mut dh_prev = cache.z.zip(dh_next, |z, u| (1.0 - z) * u);

    // candidate branch
    let du_c = dcand.zip(&cache.cand, |d, c| d * (1.0 - c * c));
    let (dxrh, g_cand) = conv2d_backward(&cache.xrh, &p.candidate, &du_c)?;
    let (mut dx, drh) = dxrh.split_channels(p.x_ch);
    let dr = drh.zip(h, |d, hv| d * hv);
    dh_prev.add_assign(&drh.zip(&cache.r, |d, r| d * r));

    // gate branches
    let du_z = dz.zip(&cache.z, |d, z| d * z * (1.0 - z));
    let (dxh_z, g_update) = conv2d_backward(&cache.xh, &p.update, &du_z)?;
    let du_r = dr.zip(&cache.r, |d, r| d * r * (1.0 - r));
    let (dxh_r, g_reset) = conv2d_backward(&cache.xh, &p.reset, &du_r)?;

    let (dx_z, dh_z) = dxh_z.split_channels(p.x_ch);
    let (dx_r, dh_r) = dxh_r.split_channels(p.x_ch);
    dx.add_assign(&dx_z);
    dx.add_assign(&dx_r);
    dh_prev.add_assign(&dh_z);
    dh_prev.add_assign(&dh_r);

    Ok((
        dx,
        dh_prev,
        GruParams { x_ch: p.x_ch, h_ch: p.h_ch, update: g_update, reset: g_reset, candidate: g_cand },
    ))
}

/// Gate convolutions of one ConvLSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<R> {
    pub x_ch: usize,
    pub h_ch: usize,
    pub input: ConvParams<R>,
    pub forget: ConvParams<R>,
    pub output: ConvParams<R>,
    pub cell: ConvParams<R>,
}

impl<R: Real> LstmParams<R> {
    pub fn zeros(x_ch: usize, h_ch: usize) -> Self {
        Self {
            x_ch,
            h_ch,
            input: ConvParams::zeros(x_ch + h_ch, h_ch),
            forget: ConvParams::zeros(x_ch + h_ch, h_ch),
            output: ConvParams::zeros(x_ch + h_ch, h_ch),
            cell: ConvParams::zeros(x_ch + h_ch, h_ch),
        }
    }
}

pub struct LstmCache<R> {
    pub xh: Tensor<R>,
    pub c_prev: Tensor<R>,
    pub i: Tensor<R>,
    pub f: Tensor<R>,
    pub o: Tensor<R>,
    pub g: Tensor<R>,
    pub tanh_c: Tensor<R>,
}

/// One ConvLSTM step, returning (h_next, c_next) and the cache.
pub fn lstm_forward<R: Real>(
    x: &Tensor<R>,
    h: &Tensor<R>,
    c: &Tensor<R>,
    p: &LstmParams<R>,
) -> Result<(Tensor<R>, Tensor<R>, LstmCache<R>)> {
    check_cell_shapes(x, h, p.x_ch, p.h_ch)?;
    if !c.same_shape(h) {
        return Err(Error::ShapeMismatch("cell state shape differs from hidden".into()));
    }
    let xh = Tensor::concat_channels(x, h)?;
    let i = sigmoid(&conv2d_forward(&xh, &p.input)?);
    let f = sigmoid(&conv2d_forward(&xh, &p.forget)?);
    let o = sigmoid(&conv2d_forward(&xh, &p.output)?);
    let g = tanh(&conv2d_forward(&xh, &p.cell)?);
    let mut c_next = Tensor::zeros(p.h_ch, x.h, x.w);
    for idx in 0..c_next.data.len() {
        c_next.data[idx] = R::from_f64(
            f.data[idx].to_f64() * c.data[idx].to_f64()
                + i.data[idx].to_f64() * g.data[idx].to_f64(),
        );
    }
    let tanh_c = tanh(&c_next);
    let h_next = o.zip(&tanh_c, |a, b| a * b);
    Ok((
        h_next,
        c_next,
        LstmCache { xh, c_prev: c.clone(), i, f, o, g, tanh_c },
    ))
}

/// One ConvLSTM step without keeping intermediates.
pub fn lstm_step<R: Real>(
    x: &Tensor<R>,
    h: &Tensor<R>,
    c: &Tensor<R>,
    p: &LstmParams<R>,
) -> Result<(Tensor<R>, Tensor<R>)> {
    let (h2, c2, _) = lstm_forward(x, h, c, p)?;
    Ok((h2, c2))
}

/// Backward through one ConvLSTM step given upstream gradients for both
/// the hidden and cell states.
pub fn lstm_backward<R: Real>(
    p: &LstmParams<R>,
    cache: &LstmCache<R>,
    dh_next: &Tensor<R>,
    dc_next: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>, Tensor<R>, LstmParams<R>)> {
    // Total gradient reaching the cell state.
    let mut dc = dc_next.clone();
    dc.add_assign(&dh_next.zip(&cache.o, |u, o| u * o).zip(&cache.tanh_c, |v, t| v * (1.0 - t * t)));

    let d_o = dh_next.zip(&cache.tanh_c, |u, t| u * t);
    let d_f = dc.zip(&cache.c_prev, |d, c| d * c);
    let d_i = dc.zip(&cache.g, |d, g| d * g);
    let d_g = dc.zip(&cache.i, |d, i| d * i);
    let dc_prev = dc.zip(&cache.f, |d, f| d * f);

    let du_i = d_i.zip(&cache.i, |d, s| d * s * (1.0 - s));
    let du_f = d_f.zip(&cache.f, |d, s| d * s * (1.0 - s));
    let du_o = d_o.zip(&cache.o, |d, s| d * s * (1.0 - s));
    let du_g = d_g.zip(&cache.g, |d, t| d * (1.0 - t * t));

    let (dxh_i, g_i) = conv2d_backward(&cache.xh, &p.input, &du_i)?;
    let (dxh_f, g_f) = conv2d_backward(&cache.xh, &p.forget, &du_f)?;
    let (dxh_o, g_o) = conv2d_backward(&cache.xh, &p.output, &du_o)?;
    let (dxh_g, g_g) = conv2d_backward(&cache.xh, &p.cell, &du_g)?;

    let mut dxh = dxh_i;
    dxh.add_assign(&dxh_f);
    dxh.add_assign(&dxh_o);
    dxh.add_assign(&dxh_g);
    let (dx, dh_prev) = dxh.split_channels(p.x_ch);

    Ok((
        dx,
        dh_prev,
        dc_prev,
        LstmParams { x_ch: p.x_ch, h_ch: p.h_ch, input: g_i, forget: g_f, output: g_o, cell: g_g },
    ))
}
