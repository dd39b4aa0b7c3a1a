//! Normalization, Otsu-based cloud masking, and centered padding/cropping.
//!
//! Cloud tops are cold, so "non-cloudy" means warm: after normalization,
//! cells at or above the Otsu threshold are replaced by the mask fill
//! value (unity by default). Otsu runs per frame on a 256-bin histogram
//! spanning the field's own min-max range.

use crate::error::{Error, Result};
use crate::grid::{Field2D, Unit};

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    /// Brightness temperatures are divided by this to normalize (300 K).
    pub norm_divisor: f32,
    /// Square size frames are zero-padded to before entering the model.
    pub pad_to: usize,
    /// Value written into warm (non-cloudy) cells.
    pub mask_fill: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { norm_divisor: 300.0, pad_to: 256, mask_fill: 1.0 }
    }
}

/// Divide by the normalization constant. Values above it pass through
/// as > 1; there is no clamp.
pub fn normalize_bt(f: &Field2D, cfg: &PreprocessConfig) -> Result<Field2D> {
    if f.unit() != Unit::Kelvin {
        return Err(Error::Data(format!("normalize_bt expects kelvin, got {:?}", f.unit())));
    }
    if f.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Data("negative brightness temperature".into()));
    }
    f.map(Unit::Normalized, |v| v / cfg.norm_divisor)
}

/// Inverse of [`normalize_bt`] up to float rounding.
pub fn denormalize_bt(f: &Field2D, cfg: &PreprocessConfig) -> Result<Field2D> {
    f.map(Unit::Kelvin, |v| v * cfg.norm_divisor)
}

/// Otsu's threshold over a 256-bin histogram spanning [min, max].
///
/// Returns the upper edge of the bin whose split maximizes between-class
/// variance; ties break to the lowest qualifying bin. Constant fields are
/// degenerate.
pub fn otsu_threshold(f: &Field2D) -> Result<f32> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in f.data() {
        min = min.min(v as f64);
        max = max.max(v as f64);
    }
    if f.data().is_empty() || min == max {
        return Err(Error::Degenerate("otsu needs at least 2 distinct values".into()));
    }
    let width = (max - min) / OTSU_BINS as f64;
    let mut counts = [0u64; OTSU_BINS];
    for &v in f.data() {
        let bin = (((v as f64 - min) / (max - min)) * OTSU_BINS as f64) as usize;
        counts[bin.min(OTSU_BINS - 1)] += 1;
    }
    let best = otsu_best_split(&counts);
    Ok((min + (best + 1) as f64 * width) as f32)
}

/// Index of the split (class 0 = bins `0..=k`) maximizing between-class
/// variance, with bin centers as class values; ties to the lowest k.
pub fn otsu_best_split(counts: &[u64; OTSU_BINS]) -> usize {
    let total: u64 = counts.iter().sum();
    let total_sum: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 + 0.5) * c as f64)
        .sum();
    let mut best_k = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0f64;
    let mut sum0 = 0f64;
    for k in 0..OTSU_BINS {
        w0 += counts[k] as f64;
        sum0 += (k as f64 + 0.5) * counts[k] as f64;
        let w1 = total as f64 - w0;
        let var = if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let mu0 = sum0 / w0;
            let mu1 = (total_sum - sum0) / w1;
            w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
        };
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    best_k
}

/// Replace warm cells (value >= threshold) by the mask fill value.
pub fn apply_cloud_mask(f: &Field2D, thr: f32, cfg: &PreprocessConfig) -> Result<Field2D> {
    if !thr.is_finite() {
        return Err(Error::Data("non-finite mask threshold".into()));
    }
    let fill = cfg.mask_fill;
    f.map(f.unit(), |v| if v >= thr { fill } else { v })
}

/// Zero-pad to `pad_to` x `pad_to`, content centered (offset floor((p-n)/2)).
pub fn pad_center(f: &Field2D, pad_to: usize) -> Result<Field2D> {
    if f.rows() > pad_to || f.cols() > pad_to {
        return Err(Error::ShapeMismatch(format!(
            "cannot pad {}x{} to {}",
            f.rows(),
            f.cols(),
            pad_to
        )));
    }
    let off_r = (pad_to - f.rows()) / 2;
    let off_c = (pad_to - f.cols()) / 2;
    Field2D::from_fn(pad_to, pad_to, f.unit(), |r, c| {
        if r >= off_r && r < off_r + f.rows() && c >= off_c && c < off_c + f.cols() {
            f.get(r - off_r, c - off_c)
        } else {
            0.0
        }
    })
}

/// Centered crop to `to` x `to`; inverse of [`pad_center`].
pub fn crop_center(f: &Field2D, to: usize) -> Result<Field2D> {
    if to > f.rows() || to > f.cols() {
        return Err(Error::ShapeMismatch(format!(
            "cannot crop {}x{} to {}",
            f.rows(),
            f.cols(),
            to
        )));
    }
    let off_r = (f.rows() - to) / 2;
    let off_c = (f.cols() - to) / 2;
    Field2D::from_fn(to, to, f.unit(), |r, c| f.get(r + off_r, c + off_c))
}

/// Full stage-1 preparation of one kelvin frame: normalize, per-frame Otsu
/// mask, pad to the model size.
pub fn preprocess_frame(f: &Field2D, cfg: &PreprocessConfig) -> Result<Field2D> {
    let norm = normalize_bt(f, cfg)?;
    let masked = match otsu_threshold(&norm) {
        Ok(thr) => apply_cloud_mask(&norm, thr, cfg)?,
        // A constant frame has nothing to mask.
        Err(Error::Degenerate(_)) => norm,
        Err(e) => return Err(e),
    };
    pad_center(&masked, cfg.pad_to)
}
