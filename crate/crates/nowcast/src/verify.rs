//! Verification metrics: RMSE, bias, SSIM, categorical scores, CRPS
//! over threshold CDFs, and the active-scene filter.

use crate::error::{Error, Result};
use crate::grid::Field2D;
use crate::rainfall::ThresholdCdf;

fn check_shapes(pred: &Field2D, obs: &Field2D) -> Result<()> {
    if pred.rows() != obs.rows() || pred.cols() != obs.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.rows(),
            pred.cols(),
            obs.rows(),
            obs.cols()
        )));
    }
    Ok(())
}

/// Root mean squared error, 64-bit accumulation.
pub fn rmse(pred: &Field2D, obs: &Field2D) -> Result<f64> {
    check_shapes(pred, obs)?;
    let n = pred.data().len() as f64;
    let ss: f64 = pred
        .data()
        .iter()
        .zip(obs.data())
        .map(|(&p, &o)| {
            let d = p as f64 - o as f64;
            d * d
        })
        .sum();
    Ok((ss / n).sqrt())
}

/// Mean error (pred minus obs).
pub fn bias(pred: &Field2D, obs: &Field2D) -> Result<f64> {
    check_shapes(pred, obs)?;
    let n = pred.data().len() as f64;
    let s: f64 = pred.data().iter().zip(obs.data()).map(|(&p, &o)| p as f64 - o as f64).sum();
    Ok(s / n)
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Only the data range varies per field kind; window and stability
/// constants are fixed.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub data_range: f64,
}

impl SsimConfig {
    /// Kelvin brightness-temperature fields.
    pub fn kelvin() -> Self {
        Self { data_range: 300.0 }
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_WINDOW {
        for col in 0..SSIM_WINDOW {
            let d2 = (r as f64 - c).powi(2) + (col as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[r * SSIM_WINDOW + col] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over all valid (unpadded) window
/// positions, Gaussian-weighted local moments.
pub fn ssim(pred: &Field2D, obs: &Field2D, cfg: &SsimConfig) -> Result<f64> {
    check_shapes(pred, obs)?;
    let (rows, cols) = (pred.rows(), pred.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {rows}x{cols}"
        )));
    }
    let w = gaussian_window();
    let c1 = (SSIM_K1 * cfg.data_range).powi(2);
    let c2 = (SSIM_K2 * cfg.data_range).powi(2);
    let (x, y) = (pred.data(), obs.data());
    let mut total = 0.0f64;
    let mut count = 0usize;
    for r0 in 0..=(rows - SSIM_WINDOW) {
        for c0 in 0..=(cols - SSIM_WINDOW) {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wr in 0..SSIM_WINDOW {
                let row = (r0 + wr) * cols + c0;
                for wc in 0..SSIM_WINDOW {
                    let g = w[wr * SSIM_WINDOW + wc];
                    let a = x[row + wc] as f64;
                    let b = y[row + wc] as f64;
                    mx += g * a;
                    my += g * b;
                    mxx += g * a * a;
                    myy += g * b * b;
                    mxy += g * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let vxy = mxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// 2x2 contingency table at an event threshold (event iff value >= thr).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyCounts {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub correct_negatives: u64,
}

impl ContingencyCounts {
    pub fn total(&self) -> u64 {
        self.hits + self.misses + self.false_alarms + self.correct_negatives
    }
}

pub fn contingency(pred: &Field2D, obs: &Field2D, thr: f32) -> Result<ContingencyCounts> {
    check_shapes(pred, obs)?;
    let mut c = ContingencyCounts::default();
    for (&p, &o) in pred.data().iter().zip(obs.data()) {
        match (p >= thr, o >= thr) {
            (true, true) => c.hits += 1,
            (true, false) => c.false_alarms += 1,
            (false, true) => c.misses += 1,
            (false, false) => c.correct_negatives += 1,
        }
    }
    Ok(c)
}

/// Categorical scores; `None` where the denominator is zero.
pub fn pod_far_f1(c: &ContingencyCounts) -> (Option<f64>, Option<f64>, Option<f64>) {
    let (h, m, fa) = (c.hits as f64, c.misses as f64, c.false_alarms as f64);
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    (ratio(h, h + m), ratio(fa, h + fa), ratio(2.0 * h, 2.0 * h + fa + m))
}

/// CRPS of a right-continuous step CDF against observation `y`:
/// the exact integral of (F(x) - 1{x >= y})^2 over [0, upper].
///
/// F is 0 before the first threshold, jumps to each pair's probability
/// at its threshold, and stays at the final probability (1) beyond the
/// last. `upper` defaults to max(final threshold, y) + 1; the integrand
/// vanishes there and beyond.
pub fn crps_step(cdf: &ThresholdCdf, y: f64, upper: Option<f64>) -> Result<f64> {
    if !y.is_finite() || y < 0.0 {
        return Err(Error::Data(format!("observation {y} must be non-negative")));
    }
    let pairs = cdf.pairs();
    let last_thr = pairs.last().unwrap().0;
    let default_upper = last_thr.max(y) + 1.0;
    let upper = upper.unwrap_or(default_upper);
    if upper < last_thr.max(y) {
        return Err(Error::Data(format!(
            "integration bound {upper} below max(threshold {last_thr}, obs {y})"
        )));
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(pairs.len() + 3);
    cuts.push(0.0);
    cuts.extend(pairs.iter().map(|p| p.0).filter(|&t| t > 0.0 && t < upper));
    if y > 0.0 && y < upper {
        cuts.push(y);
    }
    cuts.push(upper);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let f_at = |x: f64| -> f64 {
        let mut f = 0.0;
        for &(t, p) in pairs {
            if x >= t {
                f = p;
            } else {
                break;
            }
        }
        f
    };
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let mid = 0.5 * (a + b);
        let d = f_at(mid) - if mid >= y { 1.0 } else { 0.0 };
        total += d * d * (b - a);
    }
    Ok(total)
}

/// Frames where more than 5% of cells exceed 5 mm (both strict).
pub fn active_scene_filter(frames: &[Field2D]) -> Vec<(usize, Field2D)> {
    frames
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            let wet = f.data().iter().filter(|&&v| v > 5.0).count();
            (wet as f64) / (f.data().len() as f64) > 0.05
        })
        .map(|(i, f)| (i, f.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Unit;
    use crate::rainfall::to_threshold_cdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) -> Field2D {
        Field2D::from_fn(rows, cols, Unit::Mm, f).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f32, hi: f32) -> Field2D {
        Field2D::from_fn(rows, cols, Unit::Mm, |_, _| rng.gen_range(lo..hi)).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let a = field(4, 4, |r, c| (r * 4 + c) as f32);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(Unit::Mm, |v| v + 2.0).unwrap();
        assert!((rmse(&b, &a).unwrap() - 2.0).abs() < 1e-12);
        let p = Field2D::new(1, 2, Unit::Mm, vec![0.0, 0.0]).unwrap();
        let o = Field2D::new(1, 2, Unit::Mm, vec![3.0, 4.0]).unwrap();
        assert!((rmse(&p, &o).unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
        let wrong = field(3, 4, |_, _| 0.0);
        assert!(rmse(&a, &wrong).is_err());
    }

    #[test]
    fn bias_examples() {
        let a = field(4, 4, |r, c| (r + c) as f32);
        assert_eq!(bias(&a, &a).unwrap(), 0.0);
        let b = a.map(Unit::Mm, |v| v + 1.5).unwrap();
        assert!((bias(&b, &a).unwrap() - 1.5).abs() < 1e-12);
        // Antisymmetric error cancels.
        let obs = field(1, 4, |_, _| 0.0);
        let pred = Field2D::new(1, 4, Unit::Mm, vec![-2.0, 2.0, -1.0, 1.0]).unwrap();
        assert_eq!(bias(&pred, &obs).unwrap(), 0.0);
    }

    #[test]
    fn rmse_bounds_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_field(&mut rng, 8, 8, -10.0, 10.0);
            let b = random_field(&mut rng, 8, 8, -10.0, 10.0);
            assert!(rmse(&a, &b).unwrap() >= bias(&a, &b).unwrap().abs() - 1e-12);
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_field(&mut rng, 16, 16, 0.0, 300.0);
        assert_eq!(ssim(&a, &a, &SsimConfig::kelvin()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_fields_closed_form() {
        let cfg = SsimConfig { data_range: 10.0 };
        let (ax, ay) = (3.0f64, 7.0f64);
        let p = field(12, 12, |_, _| ax as f32);
        let o = field(12, 12, |_, _| ay as f32);
        let got = ssim(&p, &o, &cfg).unwrap();
        let c1 = (SSIM_K1 * 10.0).powi(2);
        // Zero variance: contrast/structure term is exactly 1.
        let expected = (2.0 * ax * ay + c1) / (ax * ax + ay * ay + c1);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        // Window-wise zero-mean observation (checkerboard); its negation
        // anticorrelates while the luminance term stays near +1.
        let o = field(16, 16, |r, c| if (r + c) % 2 == 0 { 3.0 } else { -3.0 });
        let p = o.map(Unit::Mm, |v| -v).unwrap();
        let s = ssim(&p, &o, &SsimConfig { data_range: 10.0 }).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_fields() {
        let a = field(8, 8, |_, _| 1.0);
        assert!(matches!(
            ssim(&a, &a, &SsimConfig::kelvin()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn contingency_examples_and_oracle() {
        let a = field(4, 4, |r, _| if r < 2 { 1.0 } else { 0.0 });
        let c = contingency(&a, &a, 0.5).unwrap();
        assert_eq!((c.misses, c.false_alarms), (0, 0));
        assert_eq!(c.total(), 16);

        let wet = field(3, 3, |_, _| 2.0);
        let dry = field(3, 3, |_, _| 0.0);
        let c = contingency(&wet, &dry, 1.0).unwrap();
        assert_eq!(c.false_alarms, 9);
        assert_eq!(c.hits + c.misses + c.correct_negatives, 0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_field(&mut rng, 8, 8, 0.0, 2.0);
        let o = random_field(&mut rng, 8, 8, 0.0, 2.0);
        let thr = 1.0;
        let c = contingency(&p, &o, thr).unwrap();
        let mut oracle = ContingencyCounts::default();
        for i in 0..64 {
            let pe = p.data()[i] >= thr;
            let oe = o.data()[i] >= thr;
            if pe && oe {
                oracle.hits += 1;
            } else if pe {
                oracle.false_alarms += 1;
            } else if oe {
                oracle.misses += 1;
            } else {
                oracle.correct_negatives += 1;
            }
        }
        assert_eq!(c, oracle);
    }

    #[test]
    fn categorical_scores() {
        let c = ContingencyCounts { hits: 10, ..Default::default() };
        assert_eq!(pod_far_f1(&c), (Some(1.0), Some(0.0), Some(1.0)));

        let c = ContingencyCounts { misses: 5, false_alarms: 5, ..Default::default() };
        assert_eq!(pod_far_f1(&c), (Some(0.0), Some(1.0), Some(0.0)));

        let c = ContingencyCounts { hits: 77, misses: 23, false_alarms: 39, ..Default::default() };
        let (pod, far, f1) = pod_far_f1(&c);
        assert!((pod.unwrap() - 0.770).abs() < 5e-4);
        assert!((far.unwrap() - 0.336).abs() < 5e-4);
        assert!((f1.unwrap() - 0.713).abs() < 5e-4);

        let empty = ContingencyCounts { correct_negatives: 4, ..Default::default() };
        assert_eq!(pod_far_f1(&empty), (None, None, None));
    }

    fn crps_quadrature(cdf: &ThresholdCdf, y: f64, upper: f64) -> f64 {
        let pairs = cdf.pairs();
        let f_at = |x: f64| -> f64 {
            let mut f = 0.0;
            for &(t, p) in pairs {
                if x >= t {
                    f = p;
                }
            }
            f
        };
        let dx = 1e-4;
        let n = (upper / dx).ceil() as usize;
        (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * dx;
                let d = f_at(x) - if x >= y { 1.0 } else { 0.0 };
                d * d * dx
            })
            .sum()
    }

    #[test]
    fn crps_perfect_deterministic_is_zero() {
        for y in [0.0, 1.3, 4.0] {
            let cdf = ThresholdCdf::new(vec![(y, 1.0)]).unwrap();
            assert_eq!(crps_step(&cdf, y, None).unwrap(), 0.0);
        }
    }

    #[test]
    fn crps_constant_one_cdf_penalizes_by_y() {
        let cdf = ThresholdCdf::new(vec![(0.0, 1.0)]).unwrap();
        for y in [0.5, 2.0, 7.25] {
            assert!((crps_step(&cdf, y, None).unwrap() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn crps_matches_quadrature_oracle() {
        let cases = [
            (to_threshold_cdf(5.0).unwrap(), 3.0),
            (to_threshold_cdf(5.0).unwrap(), 6.5),
            (to_threshold_cdf(1.2).unwrap(), 1.2),
            (to_threshold_cdf(0.0).unwrap(), 2.0),
            (
                ThresholdCdf::new(vec![(1.0, 0.2), (2.5, 0.6), (4.0, 1.0)]).unwrap(),
                3.3,
            ),
        ];
        for (cdf, y) in &cases {
            let upper = cdf.pairs().last().unwrap().0.max(*y) + 1.0;
            let exact = crps_step(cdf, *y, None).unwrap();
            let approx = crps_quadrature(cdf, *y, upper);
            assert!((exact - approx).abs() < 1e-3, "exact {exact} approx {approx}");
            assert!(exact >= 0.0);
        }
    }

    #[test]
    fn crps_zero_iff_degenerate_at_y() {
        let y = 2.5;
        let degenerate = ThresholdCdf::new(vec![(y, 1.0)]).unwrap();
        assert_eq!(crps_step(&degenerate, y, None).unwrap(), 0.0);
        let spread = to_threshold_cdf(y).unwrap();
        assert!(crps_step(&spread, y, None).unwrap() > 0.0);
        let offset = ThresholdCdf::new(vec![(y + 0.5, 1.0)]).unwrap();
        assert!(crps_step(&offset, y, None).unwrap() > 0.0);
    }

    #[test]
    fn crps_rejects_low_upper_bound() {
        let cdf = to_threshold_cdf(5.0).unwrap();
        assert!(crps_step(&cdf, 3.0, Some(4.0)).is_err());
    }

    #[test]
    fn active_scene_boundary_cases() {
        let n = 20 * 20;
        let exactly_5pct = field(20, 20, |r, c| if r * 20 + c < n / 20 { 9.0 } else { 0.0 });
        let dry = field(20, 20, |_, _| 0.0);
        let active = field(20, 20, |r, c| if r * 20 + c < 24 { 5.1 } else { 0.0 });
        let kept = active_scene_filter(&[exactly_5pct, dry, active.clone()]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].0, 2);
        assert_eq!(kept[0].1.data(), active.data());
    }

    #[test]
    fn active_scene_threshold_is_strict_in_value() {
        // Cells at exactly 5 mm never count as wet.
        let f = field(10, 10, |_, _| 5.0);
        assert!(active_scene_filter(&[f]).is_empty());
    }
}
