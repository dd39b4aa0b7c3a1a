//! Stage-2 domain transfer: brightness temperature to rain rate via an
//! empirical power law, 6x bilinear upsampling to the radar grid,
//! 4-hour accumulation, ROI averaging, and conversion of deterministic
//! accumulations into threshold-probability pairs.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Field2D, Unit};

/// Pivot temperature of the power law: no rain at or above 300 K.
pub const RAIN_PIVOT_K: f64 = 300.0;

/// Upsampling factor from the model grid to the radar grid.
pub const UPSAMPLE_FACTOR: usize = 6;

pub const MODEL_GRID: usize = 252;
pub const RADAR_GRID: usize = MODEL_GRID * UPSAMPLE_FACTOR;

/// Coefficients of R = alpha * max(0, 300 - T)^beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl TransformCoeffs {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(Error::Data(format!(
                "transform coefficients must be finite and positive, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for TransformCoeffs {
    fn default() -> Self {
        Self { alpha: 0.0163, beta: 1.56 }
    }
}

/// Elementwise R = alpha * max(0, 300 - T)^beta, in mm/h.
pub fn bt_to_rain(t: &Field2D, c: &TransformCoeffs) -> Result<Field2D> {
    if t.unit() != Unit::Kelvin {
        return Err(Error::Data(format!("bt_to_rain expects kelvin, got {:?}", t.unit())));
    }
    t.map(Unit::MmPerH, |v| {
        let d = (RAIN_PIVOT_K - v as f64).max(0.0);
        (c.alpha * d.powf(c.beta)) as f32
    })
}

/// Least-squares fit of log R = log alpha + beta * log(300 - T) over the
/// samples with T < 300 and R > 0.
pub fn calibrate_transform(samples: &[(f64, f64)]) -> Result<TransformCoeffs> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(t, r)| *t < RAIN_PIVOT_K && *r > 0.0)
        .map(|&(t, r)| ((RAIN_PIVOT_K - t).ln(), r.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Data(format!(
            "calibration needs at least 2 qualifying samples, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx < 1e-12 {
        return Err(Error::Degenerate(
            "all calibration samples share one temperature".into(),
        ));
    }
    let beta = sxy / sxx;
    let alpha = (mean_y - beta * mean_x).exp();
    TransformCoeffs::new(alpha, beta)
}

/// Bilinear upsampling by an integer factor with half-pixel-center
/// alignment: source coordinate = (dst + 0.5)/factor - 0.5, edge-clamped.
pub fn upsample_by(f: &Field2D, factor: usize) -> Result<Field2D> {
    if factor == 0 {
        return Err(Error::Data("upsample factor must be positive".into()));
    }
    let (rows, cols) = (f.rows(), f.cols());
    let (orows, ocols) = (rows * factor, cols * factor);
    // Precompute the 1-D clamped source indices and weights per axis.
    let axis = |n: usize, on: usize| -> Vec<(usize, usize, f32)> {
        (0..on)
            .map(|d| {
                let s = (d as f64 + 0.5) / factor as f64 - 0.5;
                let s = s.clamp(0.0, (n - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let rmap = axis(rows, orows);
    let cmap = axis(cols, ocols);
    let src = f.data();
    let mut out = vec![0.0f32; orows * ocols];
    for (dr, &(r0, r1, wr)) in rmap.iter().enumerate() {
        let top = &src[r0 * cols..r0 * cols + cols];
        let bot = &src[r1 * cols..r1 * cols + cols];
        let dst = &mut out[dr * ocols..(dr + 1) * ocols];
        for (dc, &(c0, c1, wc)) in cmap.iter().enumerate() {
            let a = top[c0] + (top[c1] - top[c0]) * wc;
            let b = bot[c0] + (bot[c1] - bot[c0]) * wc;
            dst[dc] = a + (b - a) * wr;
        }
    }
    Field2D::new(orows, ocols, f.unit(), out)
}

/// Production geometry: 252x252 model grid to 1512x1512 radar grid.
pub fn upsample_bilinear(f: &Field2D) -> Result<Field2D> {
    if f.rows() != MODEL_GRID || f.cols() != MODEL_GRID {
        return Err(Error::ShapeMismatch(format!(
            "upsample_bilinear expects {MODEL_GRID}x{MODEL_GRID}, got {}x{}",
            f.rows(),
            f.cols()
        )));
    }
    upsample_by(f, UPSAMPLE_FACTOR)
}

/// 4-hour accumulation from 16 quarter-hour rate frames: mean rate x 4 h.
pub fn cumulative_rain(frames: &[Field2D]) -> Result<Field2D> {
    if frames.len() != 16 {
        return Err(Error::ShapeMismatch(format!(
            "cumulative_rain expects 16 frames, got {}",
            frames.len()
        )));
    }
    let (rows, cols) = (frames[0].rows(), frames[0].cols());
    let mut acc = vec![0.0f64; rows * cols];
    for f in frames {
        if f.rows() != rows || f.cols() != cols || f.unit() != Unit::MmPerH {
            return Err(Error::ShapeMismatch(
                "cumulative_rain frames must all be mm/h at one shape".into(),
            ));
        }
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += v as f64;
        }
    }
    Field2D::new(rows, cols, Unit::Mm, acc.iter().map(|&a| (a * 0.25) as f32).collect())
}

/// Half-open rectangle on a rainfall grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionOfInterest {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl RegionOfInterest {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Result<Self> {
        if row0 >= row1 || col0 >= col1 {
            return Err(Error::Data(format!(
                "degenerate roi [{row0},{row1})x[{col0},{col1})"
            )));
        }
        Ok(Self { row0, col0, row1, col1 })
    }
}

/// Arithmetic mean over the ROI cells.
pub fn roi_average(f: &Field2D, roi: &RegionOfInterest) -> Result<f64> {
    if roi.row1 > f.rows() || roi.col1 > f.cols() {
        return Err(Error::Data(format!(
            "roi extends to ({},{}) beyond the {}x{} field",
            roi.row1,
            roi.col1,
            f.rows(),
            f.cols()
        )));
    }
    let mut sum = 0.0f64;
    for r in roi.row0..roi.row1 {
        for c in roi.col0..roi.col1 {
            sum += f.get(r, c) as f64;
        }
    }
    Ok(sum / ((roi.row1 - roi.row0) * (roi.col1 - roi.col0)) as f64)
}

/// Right-continuous step CDF over accumulation thresholds, P(X <= thr).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCdf {
    pairs: Vec<(f64, f64)>,
}

impl ThresholdCdf {
    /// Thresholds must be strictly increasing, probabilities
    /// non-decreasing in [0,1], and the last probability exactly 1.
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        let last = pairs
            .last()
            .ok_or_else(|| Error::Empty("a CDF needs at least one pair".into()))?;
        if last.1 != 1.0 {
            return Err(Error::Data(format!("final CDF probability is {}, not 1", last.1)));
        }
        for w in pairs.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::Data(format!(
                    "CDF pairs not monotone: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        if pairs.iter().any(|&(t, p)| !t.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::Data("CDF pair out of range".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

/// Discretize a deterministic accumulation into threshold-probability
/// pairs: below 2 mm the value itself carries probability 1; otherwise
/// knots at v-1 (0.5), v-0.5 (0.75), and v+2 (1.0).
pub fn to_threshold_cdf(v: f64) -> Result<ThresholdCdf> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Data(format!("accumulation {v} must be non-negative")));
    }
    if v < 2.0 {
        return ThresholdCdf::new(vec![(v, 1.0)]);
    }
    ThresholdCdf::new(vec![((v - 1.0).max(0.0), 0.5), (v - 0.5, 0.75), (v + 2.0, 1.0)])
}

/// Write `roi_id,threshold_mm,probability` rows, 6 decimal places.
pub fn write_cdf_csv<W: Write>(out: &mut W, rows: &[(u32, ThresholdCdf)]) -> Result<()> {
    writeln!(out, "roi_id,threshold_mm,probability")?;
    for (id, cdf) in rows {
        for &(thr, p) in cdf.pairs() {
            writeln!(out, "{id},{thr:.6},{p:.6}")?;
        }
    }
    Ok(())
}
