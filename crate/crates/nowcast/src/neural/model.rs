//! The encoder / recurrent-stack / decoder forecast model and its
//! backpropagation-through-time pass.
//!
//! Per input frame the encoder applies conv-ReLU twice. The two recurrent
//! cells are unrolled over the 4 observed frames and then 4 further steps
//! with zero input; the decoder (conv-ReLU, conv-ReLU, conv-linear) maps
//! each of the 4 forecast hidden states to one output frame. Encoder and
//! decoder weights are shared across time steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::cells::{
    gru_backward, gru_forward, lstm_backward, lstm_forward, GruCache, GruParams, LstmCache,
    LstmParams,
};
use super::conv::{conv2d_backward, conv2d_forward, ConvParams, KSIZE};
use super::real::Real;
use super::tensor::{relu, relu_backward, Tensor};

/// Observed frames fed to the recurrent stack.
pub const INPUT_STEPS: usize = 4;
/// Zero-input unroll steps decoded into forecast frames.
pub const FORECAST_STEPS: usize = 4;

/// Which recurrent cell the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    ConvGru,
    ConvLstm,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::ConvGru => "convgru",
            CellKind::ConvLstm => "convlstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convgru" => Ok(CellKind::ConvGru),
            "convlstm" => Ok(CellKind::ConvLstm),
            other => Err(Error::Data(format!("unknown cell kind '{other}'"))),
        }
    }
}

/// Channel widths along the chain 1 -> enc1 -> enc2 -> [hidden1, hidden2]
/// -> dec1 -> dec2 -> 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub enc1: usize,
    pub enc2: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dec1: usize,
    pub dec2: usize,
}

impl Arch {
    /// The production chain 1->16->32->[64,64]->32->16->1.
    pub fn standard() -> Self {
        Self { enc1: 16, enc2: 32, hidden1: 64, hidden2: 64, dec1: 32, dec2: 16 }
    }

    /// Tiny chain 1->2->3->[4,4]->3->2->1 used for gradient verification.
    pub fn miniature() -> Self {
        Self { enc1: 2, enc2: 3, hidden1: 4, hidden2: 4, dec1: 3, dec2: 2 }
    }
}

/// Parameters of one recurrent layer, either cell flavor.
#[derive(Debug, Clone, PartialEq)]
pub enum RnnParams<R> {
    Gru(GruParams<R>),
    Lstm(LstmParams<R>),
}

impl<R: Real> RnnParams<R> {
    fn zeros(kind: CellKind, x_ch: usize, h_ch: usize) -> Self {
        match kind {
            CellKind::ConvGru => RnnParams::Gru(GruParams::zeros(x_ch, h_ch)),
            CellKind::ConvLstm => RnnParams::Lstm(LstmParams::zeros(x_ch, h_ch)),
        }
    }

    pub fn h_ch(&self) -> usize {
        match self {
            RnnParams::Gru(p) => p.h_ch,
            RnnParams::Lstm(p) => p.h_ch,
        }
    }
}

/// All learnable tensors of one model. Also serves as the gradient store:
/// a zeroed clone holds one gradient array per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<R> {
    pub arch: Arch,
    pub cell: CellKind,
    pub enc1: ConvParams<R>,
    pub enc2: ConvParams<R>,
    pub rnn1: RnnParams<R>,
    pub rnn2: RnnParams<R>,
    pub dec1: ConvParams<R>,
    pub dec2: ConvParams<R>,
    pub dec3: ConvParams<R>,
}

impl<R: Real> NetParams<R> {
    pub fn zeros(arch: Arch, cell: CellKind) -> Self {
        Self {
            arch,
            cell,
            enc1: ConvParams::zeros(1, arch.enc1),
            enc2: ConvParams::zeros(arch.enc1, arch.enc2),
            rnn1: RnnParams::zeros(cell, arch.enc2, arch.hidden1),
            rnn2: RnnParams::zeros(cell, arch.hidden1, arch.hidden2),
            dec1: ConvParams::zeros(arch.hidden2, arch.dec1),
            dec2: ConvParams::zeros(arch.dec1, arch.dec2),
            dec3: ConvParams::zeros(arch.dec2, 1),
        }
    }

    /// Seeded initialization: kernels uniform in +-sqrt(1/(fan_in*9)),
    /// biases zero.
    pub fn init(arch: Arch, cell: CellKind, seed: u64) -> Self {
        let mut p = Self::zeros(arch, cell);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in p.convs_mut() {
            let bound = (1.0 / (conv.in_ch as f64 * (KSIZE * KSIZE) as f64)).sqrt();
            for k in conv.kernels.iter_mut() {
                *k = R::from_f64(rng.gen_range(-bound..bound));
            }
        }
        p
    }

    /// Every convolution in the model with a stable name and gate label.
    fn convs(&self) -> Vec<(&'static str, &ConvParams<R>)> {
        let mut out: Vec<(&'static str, &ConvParams<R>)> =
            vec![("enc1", &self.enc1), ("enc2", &self.enc2)];
        for (name, rnn) in [("rnn1", &self.rnn1), ("rnn2", &self.rnn2)] {
            match rnn {
                RnnParams::Gru(p) => {
                    let names: [&'static str; 3] = match name {
                        "rnn1" => ["rnn1.z", "rnn1.r", "rnn1.c"],
                        _ => ["rnn2.z", "rnn2.r", "rnn2.c"],
                    };
                    out.push((names[0], &p.update));
                    out.push((names[1], &p.reset));
                    out.push((names[2], &p.candidate));
                }
                RnnParams::Lstm(p) => {
                    let names: [&'static str; 4] = match name {
                        "rnn1" => ["rnn1.i", "rnn1.f", "rnn1.o", "rnn1.g"],
                        _ => ["rnn2.i", "rnn2.f", "rnn2.o", "rnn2.g"],
                    };
                    out.push((names[0], &p.input));
                    out.push((names[1], &p.forget));
                    out.push((names[2], &p.output));
                    out.push((names[3], &p.cell));
                }
            }
        }
        out.push(("dec1", &self.dec1));
        out.push(("dec2", &self.dec2));
        out.push(("dec3", &self.dec3));
        out
    }

    fn convs_mut(&mut self) -> Vec<&mut ConvParams<R>> {
        let mut out: Vec<&mut ConvParams<R>> = vec![&mut self.enc1, &mut self.enc2];
        for rnn in [&mut self.rnn1, &mut self.rnn2] {
            match rnn {
                RnnParams::Gru(p) => {
                    out.push(&mut p.update);
                    out.push(&mut p.reset);
                    out.push(&mut p.candidate);
                }
                RnnParams::Lstm(p) => {
                    out.push(&mut p.input);
                    out.push(&mut p.forget);
                    out.push(&mut p.output);
                    out.push(&mut p.cell);
                }
            }
        }
        out.push(&mut self.dec1);
        out.push(&mut self.dec2);
        out.push(&mut self.dec3);
        out
    }

    /// Flat list of parameter arrays in a stable order
    /// (kernels then bias per convolution).
    pub fn param_arrays(&self) -> Vec<&[R]> {
        let mut out = Vec::new();
        for (_, c) in self.convs() {
            out.push(c.kernels.as_slice());
            out.push(c.bias.as_slice());
        }
        out
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<R>> {
        let mut out: Vec<&mut Vec<R>> = Vec::new();
        for c in self.convs_mut() {
            let ConvParams { kernels, bias, .. } = c;
            out.push(kernels);
            out.push(bias);
        }
        out
    }

    /// Named shape-tagged arrays, used by the checkpoint format.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[R])> {
        let mut out = Vec::new();
        for (name, c) in self.convs() {
            out.push((
                format!("{name}.kernel"),
                vec![c.out_ch, c.in_ch, KSIZE, KSIZE],
                c.kernels.as_slice(),
            ));
            out.push((format!("{name}.bias"), vec![c.out_ch], c.bias.as_slice()));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_arrays().iter().map(|a| a.len()).sum()
    }

    /// `self += other * scale`, used for gradient accumulation.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        let theirs = other.param_arrays();
        let mut mine = self.param_arrays_mut();
        if mine.len() != theirs.len() {
            return Err(Error::ShapeMismatch("parameter structure mismatch".into()));
        }
        for (m, t) in mine.iter_mut().zip(theirs) {
            if m.len() != t.len() {
                return Err(Error::ShapeMismatch("parameter array length mismatch".into()));
            }
            for (a, &b) in m.iter_mut().zip(t) {
                *a = R::from_f64(a.to_f64() + b.to_f64() * scale);
            }
        }
        Ok(())
    }

    /// Convert storage width (used to instantiate the f64 gradient check).
    pub fn convert<S: Real>(&self) -> NetParams<S> {
        let mut out = NetParams::<S>::zeros(self.arch, self.cell);
        let src = self.param_arrays();
        let mut dst = out.param_arrays_mut();
        for (d, s) in dst.iter_mut().zip(src) {
            for (dv, &sv) in d.iter_mut().zip(s) {
                *dv = S::from_f64(sv.to_f64());
            }
        }
        out
    }
}

enum RnnState<R> {
    Gru(Tensor<R>),
    Lstm(Tensor<R>, Tensor<R>),
}

enum RnnStepCache<R> {
    Gru(GruCache<R>),
    Lstm(LstmCache<R>),
}

fn rnn_step_cached<R: Real>(
    x: &Tensor<R>,
    state: &RnnState<R>,
    p: &RnnParams<R>,
) -> Result<(RnnState<R>, Tensor<R>, RnnStepCache<R>)> {
    match (state, p) {
        (RnnState::Gru(h), RnnParams::Gru(p)) => {
            let (h2, cache) = gru_forward(x, h, p)?;
            Ok((RnnState::Gru(h2.clone()), h2, RnnStepCache::Gru(cache)))
        }
        (RnnState::Lstm(h, c), RnnParams::Lstm(p)) => {
            let (h2, c2, cache) = lstm_forward(x, h, c, p)?;
            Ok((RnnState::Lstm(h2.clone(), c2), h2, RnnStepCache::Lstm(cache)))
        }
        _ => Err(Error::Data("cell state/params kind mismatch".into())),
    }
}

struct EncoderCache<R> {
    x: Tensor<R>,
    z1: Tensor<R>,
    z2: Tensor<R>,
}

struct DecoderCache<R> {
    h: Tensor<R>,
    r1: Tensor<R>,
    r2: Tensor<R>,
}

struct ForwardTrace<R> {
    enc: Vec<EncoderCache<R>>,
    rnn1_caches: Vec<RnnStepCache<R>>,
    rnn2_caches: Vec<RnnStepCache<R>>,
    dec: Vec<DecoderCache<R>>,
    outputs: Vec<Tensor<R>>,
}

fn check_input<R: Real>(input: &[Tensor<R>]) -> Result<(usize, usize)> {
    if input.len() != INPUT_STEPS {
        return Err(Error::ShapeMismatch(format!(
            "model expects {INPUT_STEPS} input frames, got {}",
            input.len()
        )));
    }
    let (h, w) = (input[0].h, input[0].w);
    for (i, t) in input.iter().enumerate() {
        if t.ch != 1 || t.h != h || t.w != w {
            return Err(Error::ShapeMismatch(format!(
                "input frame {i} has shape {}x{}x{}",
                t.ch, t.h, t.w
            )));
        }
    }
    Ok((h, w))
}

fn forward_trace<R: Real>(input: &[Tensor<R>], p: &NetParams<R>) -> Result<ForwardTrace<R>> {
    let (h, w) = check_input(input)?;
    let mut enc = Vec::with_capacity(INPUT_STEPS);
    for frame in input {
        let z1 = relu(&conv2d_forward(frame, &p.enc1)?);
        let z2 = relu(&conv2d_forward(&z1, &p.enc2)?);
        enc.push(EncoderCache { x: frame.clone(), z1, z2 });
    }
    let zero_in = Tensor::zeros(p.arch.enc2, h, w);
    let mut state1 = match p.cell {
        CellKind::ConvGru => RnnState::Gru(Tensor::zeros(p.arch.hidden1, h, w)),
        CellKind::ConvLstm => RnnState::Lstm(
            Tensor::zeros(p.arch.hidden1, h, w),
            Tensor::zeros(p.arch.hidden1, h, w),
        ),
    };
    let mut state2 = match p.cell {
        CellKind::ConvGru => RnnState::Gru(Tensor::zeros(p.arch.hidden2, h, w)),
        CellKind::ConvLstm => RnnState::Lstm(
            Tensor::zeros(p.arch.hidden2, h, w),
            Tensor::zeros(p.arch.hidden2, h, w),
        ),
    };
    let mut rnn1_caches = Vec::with_capacity(INPUT_STEPS + FORECAST_STEPS);
    let mut rnn2_caches = Vec::with_capacity(INPUT_STEPS + FORECAST_STEPS);
    let mut dec = Vec::with_capacity(FORECAST_STEPS);
    let mut outputs = Vec::with_capacity(FORECAST_STEPS);
    for t in 0..INPUT_STEPS + FORECAST_STEPS {
        let x_t = if t < INPUT_STEPS { &enc[t].z2 } else { &zero_in };
        let (s1, h1, c1) = rnn_step_cached(x_t, &state1, &p.rnn1)?;
        state1 = s1;
        rnn1_caches.push(c1);
        let (s2, h2, c2) = rnn_step_cached(&h1, &state2, &p.rnn2)?;
        state2 = s2;
        rnn2_caches.push(c2);
        if t >= INPUT_STEPS {
            let r1 = relu(&conv2d_forward(&h2, &p.dec1)?);
            let r2 = relu(&conv2d_forward(&r1, &p.dec2)?);
            let y = conv2d_forward(&r2, &p.dec3)?;
            dec.push(DecoderCache { h: h2, r1, r2 });
            outputs.push(y);
        }
    }
    Ok(ForwardTrace { enc, rnn1_caches, rnn2_caches, dec, outputs })
}

/// Forecast 4 frames from 4 preprocessed input frames.
pub fn model_forward<R: Real>(input: &[Tensor<R>], p: &NetParams<R>) -> Result<Vec<Tensor<R>>> {
    Ok(forward_trace(input, p)?.outputs)
}

/// MSE loss over the 4 forecast frames plus exact gradients for every
/// parameter, via backpropagation through the full 8-step unrolled graph.
pub fn model_backward<R: Real>(
    input: &[Tensor<R>],
    target: &[Tensor<R>],
    p: &NetParams<R>,
) -> Result<(f64, NetParams<R>)> {
    let trace = forward_trace(input, p)?;
    if target.len() != FORECAST_STEPS {
        return Err(Error::ShapeMismatch(format!(
            "expected {FORECAST_STEPS} target frames, got {}",
            target.len()
        )));
    }
    for (t, tgt) in target.iter().enumerate() {
        if !tgt.same_shape(&trace.outputs[t]) {
            return Err(Error::ShapeMismatch(format!(
                "target frame {t} shape {}x{}x{} != output {}x{}x{}",
                tgt.ch, tgt.h, tgt.w, trace.outputs[t].ch, trace.outputs[t].h, trace.outputs[t].w
            )));
        }
    }
    let n_total: usize = trace.outputs.iter().map(|o| o.data.len()).sum();
    let mut loss = 0f64;
    let mut grads = NetParams::zeros(p.arch, p.cell);
    let (h, w) = (input[0].h, input[0].w);

    // Decoder backward per forecast step, collecting dL/dh2 per step.
    let mut dh2_from_dec: Vec<Tensor<R>> = Vec::with_capacity(FORECAST_STEPS);
    for t in 0..FORECAST_STEPS {
        let out = &trace.outputs[t];
        let tgt = &target[t];
        let mut dy = Tensor::zeros(1, h, w);
        for idx in 0..out.data.len() {
            let diff = out.data[idx].to_f64() - tgt.data[idx].to_f64();
            loss += diff * diff;
            dy.data[idx] = R::from_f64(2.0 * diff / n_total as f64);
        }
        let cache = &trace.dec[t];
        let (dr2, g3) = conv2d_backward(&cache.r2, &p.dec3, &dy)?;
        grads.dec3.accum(&g3);
        let db2 = relu_backward(&cache.r2, &dr2);
        let (dr1, g2) = conv2d_backward(&cache.r1, &p.dec2, &db2)?;
        grads.dec2.accum(&g2);
        let db1 = relu_backward(&cache.r1, &dr1);
        let (dh2, g1) = conv2d_backward(&cache.h, &p.dec1, &db1)?;
        grads.dec1.accum(&g1);
        dh2_from_dec.push(dh2);
    }
    loss /= n_total as f64;

    // BPTT over both recurrent layers, from the last step backwards.
    let mut dh1_next = Tensor::zeros(p.arch.hidden1, h, w);
    let mut dc1_next = Tensor::zeros(p.arch.hidden1, h, w);
    let mut dh2_next = Tensor::zeros(p.arch.hidden2, h, w);
    let mut dc2_next = Tensor::zeros(p.arch.hidden2, h, w);
    for t in (0..INPUT_STEPS + FORECAST_STEPS).rev() {
        let mut dh2 = dh2_next;
        if t >= INPUT_STEPS {
            dh2.add_assign(&dh2_from_dec[t - INPUT_STEPS]);
        }
        let (dx2, dh2_prev, dc2_prev) = rnn_step_backward(
            &p.rnn2,
            &trace.rnn2_caches[t],
            &dh2,
            &dc2_next,
            &mut grads,
            false,
        )?;
        dh2_next = dh2_prev;
        dc2_next = dc2_prev;

        let mut dh1 = dh1_next;
        dh1.add_assign(&dx2);
        let (dx1, dh1_prev, dc1_prev) = rnn_step_backward(
            &p.rnn1,
            &trace.rnn1_caches[t],
            &dh1,
            &dc1_next,
            &mut grads,
            true,
        )?;
        dh1_next = dh1_prev;
        dc1_next = dc1_prev;

        if t < INPUT_STEPS {
            // Encoder backward for the observed frames.
            let cache = &trace.enc[t];
            let dz2 = relu_backward(&cache.z2, &dx1);
            let (dz1_raw, g2) = conv2d_backward(&cache.z1, &p.enc2, &dz2)?;
            grads.enc2.accum(&g2);
            let dz1 = relu_backward(&cache.z1, &dz1_raw);
            let (_, g1) = conv2d_backward(&cache.x, &p.enc1, &dz1)?;
            grads.enc1.accum(&g1);
        }
    }

    Ok((loss, grads))
}

fn rnn_step_backward<R: Real>(
    p: &RnnParams<R>,
    cache: &RnnStepCache<R>,
    dh: &Tensor<R>,
    dc: &Tensor<R>,
    grads: &mut NetParams<R>,
    first_layer: bool,
) -> Result<(Tensor<R>, Tensor<R>, Tensor<R>)> {
    match (p, cache) {
        (RnnParams::Gru(p), RnnStepCache::Gru(cache)) => {
            let (dx, dh_prev, g) = gru_backward(p, cache, dh)?;
            let slot = if first_layer { &mut grads.rnn1 } else { &mut grads.rnn2 };
            if let RnnParams::Gru(gp) = slot {
                gp.update.accum(&g.update);
                gp.reset.accum(&g.reset);
                gp.candidate.accum(&g.candidate);
            }
            Ok((dx, dh_prev, dc.clone()))
        }
        (RnnParams::Lstm(p), RnnStepCache::Lstm(cache)) => {
            let (dx, dh_prev, dc_prev, g) = lstm_backward(p, cache, dh, dc)?;
            let slot = if first_layer { &mut grads.rnn1 } else { &mut grads.rnn2 };
            if let RnnParams::Lstm(gp) = slot {
                gp.input.accum(&g.input);
                gp.forget.accum(&g.forget);
                gp.output.accum(&g.output);
                gp.cell.accum(&g.cell);
            }
            Ok((dx, dh_prev, dc_prev))
        }
        _ => Err(Error::Data("cell cache/params kind mismatch".into())),
    }
}

impl<R: Real> ConvParams<R> {
    fn accum(&mut self, other: &ConvParams<R>) {
        for (a, &b) in self.kernels.iter_mut().zip(&other.kernels) {
            *a = R::from_f64(a.to_f64() + b.to_f64());
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = R::from_f64(a.to_f64() + b.to_f64());
        }
    }
}
