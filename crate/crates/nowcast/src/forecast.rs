//! Stage-1 training and prediction: Adam optimisation of the recurrent
//! network under an MSE loss, the four-model staggered cascade, and the
//! persistence baseline.
//!
//! Training is bit-deterministic for a fixed seed: batch members may be
//! evaluated on different threads, but their gradients are collected in
//! input order and averaged by a single sequential reduction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Field2D, FrameSequence, Unit};
use crate::io::TrainingWindow;
use crate::neural::{
    load_params, model_backward, model_forward, save_params, Arch, CellKind, NetParams, Real,
    Tensor, FORECAST_STEPS, INPUT_STEPS,
};
use crate::par;
use crate::preprocess::{crop_center, PreprocessConfig};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second Adam moment estimates, kept in f64 regardless of the
/// parameter storage type, one vector per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new<R: Real>(p: &NetParams<R>, lr: f64) -> Self {
        let shapes: Vec<usize> = p.param_arrays().iter().map(|a| a.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
            lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update with bias correction, applied in place.
pub fn adam_step<R: Real>(
    p: &mut NetParams<R>,
    g: &NetParams<R>,
    s: &mut AdamState,
) -> Result<()> {
    let grads = g.param_arrays();
    if grads.len() != s.m.len()
        || grads.iter().zip(&s.m).any(|(a, m)| a.len() != m.len())
    {
        return Err(Error::ShapeMismatch("gradient/moment shapes differ".into()));
    }
    {
        let params = p.param_arrays();
        if params.len() != grads.len()
            || params.iter().zip(&grads).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("gradient/parameter shapes differ".into()));
        }
    }
    s.step_count += 1;
    let t = s.step_count as i32;
    let corr1 = 1.0 - ADAM_BETA1.powi(t);
    let corr2 = 1.0 - ADAM_BETA2.powi(t);
    let mut params = p.param_arrays_mut();
    for (ai, garr) in grads.iter().enumerate() {
        for (j, gr) in garr.iter().enumerate() {
            let g = gr.to_f64();
            let m = &mut s.m[ai][j];
            let v = &mut s.v[ai][j];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            let w = params[ai][j].to_f64();
            params[ai][j] = R::from_f64(w - s.lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 25, lr: 1e-3, seed: 7 }
    }
}

/// A trained parameter set together with its per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: NetParams<f32>,
    pub epoch_losses: Vec<f64>,
}

fn window_tensors(w: &TrainingWindow) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let to = |s: &FrameSequence| s.frames().iter().map(Tensor::from_field).collect();
    (to(&w.input), to(&w.target))
}

fn check_windows(windows: &[TrainingWindow]) -> Result<()> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Empty("training requires at least one window".into()))?;
    if windows.iter().any(|w| w.offset_hours != first.offset_hours) {
        return Err(Error::Data("training windows mix staggered offsets".into()));
    }
    Ok(())
}

fn train_from(
    init: NetParams<f32>,
    windows: &[TrainingWindow],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    check_windows(windows)?;
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::Data("batch size must be positive and lr > 0".into()));
    }
    let samples: Vec<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> =
        windows.iter().map(window_tensors).collect();
    let mut params = init;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Parallel per-sample evaluation; collected in input order so
            // the mean below is a fixed-order sequential reduction.
            let results: Vec<Result<(f64, NetParams<f32>)>> = par::map_vec(batch, |&i| {
                let (input, target) = &samples[i];
                model_backward(input, target, &params)
            });
            let mut mean_grad = NetParams::<f32>::zeros(params.arch, params.cell);
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grad) = r?;
                loss_sum += loss;
                mean_grad.add_scaled(&grad, scale)?;
            }
            adam_step(&mut params, &mean_grad, &mut adam)?;
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
    }
    Ok(TrainedModel { params, epoch_losses })
}

/// Train from a fresh deterministic initialization.
pub fn train_model(
    windows: &[TrainingWindow],
    arch: Arch,
    cell: CellKind,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_from(NetParams::init(arch, cell, cfg.seed), windows, cfg)
}

/// Continue training from pretrained parameters with fresh Adam moments.
pub fn fine_tune(
    p: &NetParams<f32>,
    windows: &[TrainingWindow],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    check_windows(windows)?;
    train_from(p.clone(), windows, cfg)
}

/// Four independent models at staggered horizons of 1..=4 hours.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub cell: CellKind,
    pub models: [NetParams<f32>; 4],
}

pub const CASCADE_OFFSETS: [u8; 4] = [1, 2, 3, 4];

impl CascadeModel {
    pub fn new(models: [NetParams<f32>; 4]) -> Result<Self> {
        let cell = models[0].cell;
        let arch = models[0].arch;
        if models.iter().any(|m| m.cell != cell || m.arch != arch) {
            return Err(Error::Data("cascade models differ in architecture".into()));
        }
        Ok(Self { cell, models })
    }
}

/// Train the four cascade models, one per staggered offset, in parallel.
///
/// `windows` must hold four lists with offsets 1, 2, 3, 4 in order.
pub fn train_cascade(
    windows: &[Vec<TrainingWindow>],
    arch: Arch,
    cell: CellKind,
    cfg: &TrainConfig,
) -> Result<(CascadeModel, Vec<Vec<f64>>)> {
    if windows.len() != 4 {
        return Err(Error::Data(format!("cascade needs 4 window lists, got {}", windows.len())));
    }
    for (k, w) in windows.iter().enumerate() {
        check_windows(w)?;
        if w[0].offset_hours != CASCADE_OFFSETS[k] {
            return Err(Error::Data(format!(
                "window list {k} has offset {}, expected {}",
                w[0].offset_hours, CASCADE_OFFSETS[k]
            )));
        }
    }
    let mut trained: Vec<Result<TrainedModel>> =
        par::map_vec(windows, |w| train_model(w, arch, cell, cfg));
    // Pull out in offset order.
    let t4: Result<Vec<TrainedModel>> = trained.drain(..).collect();
    let mut t4 = t4?;
    let losses: Vec<Vec<f64>> = t4.iter().map(|t| t.epoch_losses.clone()).collect();
    let models: Vec<NetParams<f32>> = t4.drain(..).map(|t| t.params).collect();
    let models: [NetParams<f32>; 4] =
        models.try_into().map_err(|_| Error::Data("cascade arity".into()))?;
    Ok((CascadeModel::new(models)?, losses))
}

/// Run all four models on the same 4 preprocessed input frames and
/// concatenate their 4-frame outputs into a 16-frame forecast, cropped
/// to `crop_to` pixels square (pass the padded size for no cropping).
pub fn cascade_predict(
    c: &CascadeModel,
    input: &FrameSequence,
    crop_to: usize,
) -> Result<FrameSequence> {
    if input.len() != INPUT_STEPS {
        return Err(Error::ShapeMismatch(format!(
            "cascade input needs {INPUT_STEPS} frames, got {}",
            input.len()
        )));
    }
    let tensors: Vec<Tensor<f32>> = input.frames().iter().map(Tensor::from_field).collect();
    let per_model: Vec<Result<Vec<Tensor<f32>>>> =
        par::map_vec(&c.models, |m| model_forward(&tensors, m));
    let mut frames = Vec::with_capacity(4 * FORECAST_STEPS);
    for outputs in per_model {
        for t in outputs? {
            frames.push(crop_center(&t.to_field(Unit::Normalized)?, crop_to)?);
        }
    }
    FrameSequence::new(frames)
}

/// Repeat the last observed frame `n` times.
pub fn persistence_predict(input: &FrameSequence, n: usize) -> Vec<Field2D> {
    let last = input.frames().last().expect("FrameSequence is non-empty");
    vec![last.clone(); n]
}

const MANIFEST_FILE: &str = "manifest.txt";

fn model_file(offset: u8) -> String {
    format!("model_offset{offset}.w4cp")
}

/// FNV-1a over the exact bit patterns of the preprocessing settings, so
/// a checkpoint refuses to load under a different normalization.
pub fn preprocess_hash(cfg: &PreprocessConfig) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&cfg.norm_divisor.to_bits().to_le_bytes());
    eat(&(cfg.pad_to as u64).to_le_bytes());
    eat(&cfg.mask_fill.to_bits().to_le_bytes());
    h
}

/// Write the four model files plus a manifest into `dir`.
pub fn save_cascade(c: &CascadeModel, pre: &PreprocessConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, m) in c.models.iter().enumerate() {
        save_params(m, &dir.join(model_file(CASCADE_OFFSETS[k])))?;
    }
    let manifest = format!(
        "cell = {}\noffsets = 1,2,3,4\npreprocess_hash = {:016x}\n",
        c.cell.as_str(),
        preprocess_hash(pre)
    );
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Load a cascade checkpoint, validating the manifest against `pre`.
pub fn load_cascade(dir: &Path, pre: &PreprocessConfig) -> Result<CascadeModel> {
    let manifest = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut cell = None;
    let mut hash = None;
    for line in manifest.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        match key.trim() {
            "cell" => cell = Some(CellKind::parse(value.trim())?),
            "preprocess_hash" => {
                hash = Some(u64::from_str_radix(value.trim(), 16).map_err(|_| {
                    Error::Format("manifest preprocess_hash is not hex".into())
                })?)
            }
            "offsets" => {
                if value.trim() != "1,2,3,4" {
                    return Err(Error::Format("manifest offsets are not 1,2,3,4".into()));
                }
            }
            _ => {}
        }
    }
    let cell = cell.ok_or_else(|| Error::Format("manifest missing cell".into()))?;
    let hash = hash.ok_or_else(|| Error::Format("manifest missing preprocess_hash".into()))?;
    if hash != preprocess_hash(pre) {
        return Err(Error::Format(
            "checkpoint was written under different preprocessing settings".into(),
        ));
    }
    let mut models = Vec::with_capacity(4);
    for offset in CASCADE_OFFSETS {
        let m = load_params(&dir.join(model_file(offset)))?;
        if m.cell != cell {
            return Err(Error::Format(format!(
                "model for offset {offset} disagrees with manifest cell kind"
            )));
        }
        models.push(m);
    }
    let models: [NetParams<f32>; 4] =
        models.try_into().map_err(|_| Error::Data("cascade arity".into()))?;
    CascadeModel::new(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{gen_synthetic, make_windows};
    use crate::preprocess::normalize_bt;
    use tempfile::tempdir;

    fn tiny_params(seed: u64) -> NetParams<f64> {
        NetParams::init(Arch::miniature(), CellKind::ConvGru, seed)
    }

    fn const_grad(template: &NetParams<f64>, c: f64) -> NetParams<f64> {
        let mut g = NetParams::zeros(template.arch, template.cell);
        for arr in g.param_arrays_mut() {
            for v in arr.iter_mut() {
                *v = c;
            }
        }
        g
    }

    /// Normalized synthetic sequence at desk scale.
    fn norm_seq(seed: u64, n: usize, size: usize) -> FrameSequence {
        let cfg = PreprocessConfig::default();
        let seq = gen_synthetic(seed, n, size, size).unwrap();
        FrameSequence::new(
            seq.frames().iter().map(|f| normalize_bt(f, &cfg).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = tiny_params(1);
        let before = p.clone();
        let g = const_grad(&p, 0.0);
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g, &mut s).unwrap();
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // With g = c everywhere, bias correction gives m_hat = c and
        // v_hat = c^2, so the first update is lr * c/(|c| + eps) per
        // element, i.e. almost exactly lr * sign(c).
        for c in [0.3, -1.7] {
            let mut p = tiny_params(2);
            let before = p.clone();
            let g = const_grad(&p, c);
            let mut s = AdamState::new(&p, 1e-3);
            adam_step(&mut p, &g, &mut s).unwrap();
            let pa = p.param_arrays();
            let ba = before.param_arrays();
            for (pav, bav) in pa.iter().zip(&ba) {
                for (a, b) in pav.iter().zip(bav.iter()) {
                    let delta = a - b;
                    assert!((delta + 1e-3 * c.signum()).abs() < 1e-9, "delta {delta}");
                }
            }
        }
    }

    #[test]
    fn adam_matches_scalar_oracle_over_two_steps() {
        let mut p = tiny_params(3);
        let flat0: Vec<f64> =
            p.param_arrays().iter().flat_map(|a| a.iter().copied()).collect();
        let g1 = const_grad(&p, 0.25);
        let mut g2 = const_grad(&p, 0.0);
        for (ai, arr) in g2.param_arrays_mut().iter_mut().enumerate() {
            for (j, v) in arr.iter_mut().enumerate() {
                *v = -0.1 + 0.01 * ((ai + j) % 7) as f64;
            }
        }
        let g2_flat: Vec<f64> =
            g2.param_arrays().iter().flat_map(|a| a.iter().copied()).collect();
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &g1, &mut s).unwrap();
        adam_step(&mut p, &g2, &mut s).unwrap();
        // Independent per-scalar recurrence.
        let expected: Vec<f64> = flat0
            .iter()
            .zip(&g2_flat)
            .map(|(&w0, &gb)| {
                let mut w = w0;
                let (mut m, mut v) = (0.0, 0.0);
                for (t, g) in [(1, 0.25), (2, gb)] {
                    m = 0.9 * m + 0.1 * g;
                    v = 0.999 * v + 0.001 * g * g;
                    let mh = m / (1.0 - 0.9f64.powi(t));
                    let vh = v / (1.0 - 0.999f64.powi(t));
                    w -= 1e-3 * mh / (vh.sqrt() + 1e-8);
                }
                w
            })
            .collect();
        let got: Vec<f64> =
            p.param_arrays().iter().flat_map(|a| a.iter().copied()).collect();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = tiny_params(4);
        let other = NetParams::<f64>::init(
            Arch { enc1: 3, ..Arch::miniature() },
            CellKind::ConvGru,
            4,
        );
        let mut s = AdamState::new(&p, 1e-3);
        assert!(matches!(
            adam_step(&mut p, &other, &mut s),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn training_rejects_empty_and_mixed_offsets() {
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
        let err = train_model(&[], Arch::miniature(), CellKind::ConvGru, &cfg);
        assert!(matches!(err, Err(Error::Empty(_))));
        let seq = norm_seq(11, 16, 8);
        let mut mixed = make_windows(&seq, 1).unwrap();
        mixed.extend(make_windows(&seq, 2).unwrap());
        let err = train_model(&mixed, Arch::miniature(), CellKind::ConvGru, &cfg);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let seq = norm_seq(5, 14, 8);
        let windows = make_windows(&seq, 1).unwrap();
        let cfg = TrainConfig { epochs: 4, batch_size: 3, lr: 1e-3, seed: 9 };
        let a = train_model(&windows, Arch::miniature(), CellKind::ConvGru, &cfg).unwrap();
        let b = train_model(&windows, Arch::miniature(), CellKind::ConvGru, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.epoch_losses.len(), 4);
        assert!(
            a.epoch_losses.last().unwrap() < a.epoch_losses.first().unwrap(),
            "losses {:?}",
            a.epoch_losses
        );
    }

    #[test]
    fn single_window_memorization() {
        let seq = norm_seq(6, 8, 8);
        let windows = make_windows(&seq, 1).unwrap();
        let one = &windows[..1];
        let cfg = TrainConfig { epochs: 10, batch_size: 1, lr: 1e-3, seed: 1 };
        let t = train_model(one, Arch::miniature(), CellKind::ConvGru, &cfg).unwrap();
        assert!(t.epoch_losses[9] < t.epoch_losses[0]);
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let seq = norm_seq(7, 8, 8);
        let windows = make_windows(&seq, 1).unwrap();
        let p = NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 2);
        let cfg = TrainConfig { epochs: 0, batch_size: 4, ..TrainConfig::default() };
        let t = fine_tune(&p, &windows, &cfg).unwrap();
        assert_eq!(t.params, p);
        assert!(t.epoch_losses.is_empty());
    }

    #[test]
    fn cascade_predict_shape_and_symmetry() {
        let p = NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 3);
        let c = CascadeModel::new([p.clone(), p.clone(), p.clone(), p]).unwrap();
        let seq = norm_seq(8, 4, 8);
        let input = FrameSequence::new(seq.frames()[..4].to_vec()).unwrap();
        let out = cascade_predict(&c, &input, 6).unwrap();
        assert_eq!(out.len(), 16);
        assert_eq!((out.rows(), out.cols()), (6, 6));
        assert_eq!(out.unit(), Unit::Normalized);
        // Identical models: the four 4-frame blocks coincide.
        for block in 1..4 {
            for t in 0..4 {
                assert_eq!(
                    out.frames()[t].data(),
                    out.frames()[4 * block + t].data()
                );
            }
        }
    }

    #[test]
    fn cascade_predict_matches_serial_invocation() {
        let models = [
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 10),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 11),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 12),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 13),
        ];
        let c = CascadeModel::new(models.clone()).unwrap();
        let seq = norm_seq(9, 4, 8);
        let out = cascade_predict(&c, &seq, 8).unwrap();
        let tensors: Vec<Tensor<f32>> =
            seq.frames().iter().map(Tensor::from_field).collect();
        for (k, m) in models.iter().enumerate() {
            for (t, frame) in model_forward(&tensors, m).unwrap().iter().enumerate() {
                assert_eq!(
                    out.frames()[4 * k + t].data(),
                    frame.to_field(Unit::Normalized).unwrap().data()
                );
            }
        }
    }

    #[test]
    fn cascade_rejects_wrong_input_count() {
        let p = NetParams::<f32>::init(Arch::miniature(), CellKind::ConvGru, 3);
        let c = CascadeModel::new([p.clone(), p.clone(), p.clone(), p]).unwrap();
        let seq = norm_seq(1, 3, 8);
        assert!(matches!(
            cascade_predict(&c, &seq, 8),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn persistence_examples() {
        let seq = norm_seq(2, 2, 8);
        let out = persistence_predict(&seq, 3);
        assert_eq!(out.len(), 3);
        for f in &out {
            assert_eq!(f.data(), seq.frames()[1].data());
        }
        assert!(persistence_predict(&seq, 0).is_empty());
    }

    #[test]
    fn cascade_checkpoint_round_trip() {
        let models = [
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvLstm, 20),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvLstm, 21),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvLstm, 22),
            NetParams::<f32>::init(Arch::miniature(), CellKind::ConvLstm, 23),
        ];
        let c = CascadeModel::new(models).unwrap();
        let pre = PreprocessConfig::default();
        let dir = tempdir().unwrap();
        save_cascade(&c, &pre, dir.path()).unwrap();
        let loaded = load_cascade(dir.path(), &pre).unwrap();
        assert_eq!(loaded, c);
        // A different preprocessing config is refused.
        let other = PreprocessConfig { norm_divisor: 273.0, ..pre };
        assert!(matches!(
            load_cascade(dir.path(), &other),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn train_cascade_validates_offsets() {
        let seq = norm_seq(30, 12, 8);
        let w1 = make_windows(&seq, 1).unwrap();
        let bad = vec![w1.clone(), w1.clone(), w1.clone(), w1];
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        assert!(matches!(
            train_cascade(&bad, Arch::miniature(), CellKind::ConvGru, &cfg),
            Err(Error::Data(_))
        ));
    }
}
