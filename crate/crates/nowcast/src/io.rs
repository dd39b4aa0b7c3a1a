//! Frame files on disk, supervised training windows, and synthetic
//! advecting-cloud sequences for desk-scale experiments.
//!
//! The on-disk container is a minimal little-endian binary format
//! ("W4CF"): a fixed header followed by t-major row-major float32 frames.
//! Round trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Field2D, FrameSequence, Unit};

const MAGIC: &[u8; 4] = b"W4CF";
const VERSION: u16 = 1;

fn unit_tag(u: Unit) -> u8 {
    match u {
        Unit::Kelvin => 0,
        Unit::Normalized => 1,
        Unit::MmPerH => 2,
        Unit::Mm => 3,
    }
}

fn tag_unit(t: u8) -> Result<Unit> {
    match t {
        0 => Ok(Unit::Kelvin),
        1 => Ok(Unit::Normalized),
        2 => Ok(Unit::MmPerH),
        3 => Ok(Unit::Mm),
        _ => Err(Error::Format(format!("unknown unit tag {t}"))),
    }
}

/// Write a sequence as a W4CF file, bit-exact.
pub fn save_frames(seq: &FrameSequence, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(15 + seq.len() * seq.rows() * seq.cols() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.cols() as u32).to_le_bytes());
    buf.push(unit_tag(seq.unit()));
    for frame in seq.frames() {
        for &v in frame.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a W4CF file back into a sequence.
pub fn load_frames(path: &Path) -> Result<FrameSequence> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 19 {
        return Err(Error::Corrupt(format!(
            "file too short for header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not a W4CF file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let rows = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let unit = tag_unit(bytes[18])?;
    let payload = &bytes[19..];
    let expected = n_frames * rows * cols * 4;
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            expected
        )));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows * cols {
            let off = (f * rows * cols + i) * 4;
            let v = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite value in frame {f}")));
            }
            data.push(v);
        }
        frames.push(Field2D::new(rows, cols, unit, data)?);
    }
    FrameSequence::new(frames)
}

/// One supervised sample: 4 input frames and 4 target frames at a
/// staggered horizon of `offset_hours` (1..=4).
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub input: FrameSequence,
    pub target: FrameSequence,
    pub offset_hours: u8,
}

/// Slice a sequence into stride-1 training windows for one horizon.
///
/// With the last input frame at index `t0`, the targets are the frames at
/// `t0 + 4*(offset-1) + 1 ..= t0 + 4*offset`. A too-short sequence yields
/// an empty list.
pub fn make_windows(seq: &FrameSequence, offset_hours: u8) -> Result<Vec<TrainingWindow>> {
    if !(1..=4).contains(&offset_hours) {
        return Err(Error::Data(format!("offset_hours {offset_hours} not in 1..=4")));
    }
    let k = offset_hours as usize;
    let needed = 4 + 4 * k;
    let mut windows = Vec::new();
    if seq.len() < needed {
        return Ok(windows);
    }
    for start in 0..=(seq.len() - needed) {
        let input = FrameSequence::new(seq.frames()[start..start + 4].to_vec())?;
        let tgt_start = start + 4 * k;
        let target = FrameSequence::new(seq.frames()[tgt_start..tgt_start + 4].to_vec())?;
        windows.push(TrainingWindow { input, target, offset_hours });
    }
    Ok(windows)
}

/// One advecting cold-cloud blob.
#[derive(Debug, Clone)]
pub struct BlobSpec {
    /// Initial center, fractional pixels.
    pub row: f64,
    pub col: f64,
    /// Per-frame velocity in pixels; each component bounded by 2.
    pub vel_row: f64,
    pub vel_col: f64,
    /// Coldest brightness temperature at full amplitude, in [200, 260] K.
    pub min_bt: f64,
    /// Gaussian radius in pixels.
    pub sigma: f64,
    /// Frame index of peak amplitude.
    pub peak_frame: f64,
    /// Temporal width of the growth/decay envelope, in frames.
    pub envelope_tau: f64,
}

/// Velocity/amplitude regime for the synthetic generator; the transfer
/// experiments use two different regimes as stand-in regions.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_blobs: (usize, usize),
    pub speed: (f64, f64),
    /// Restrict advection heading to this range of angles (radians).
    pub heading: (f64, f64),
    pub min_bt: (f64, f64),
    /// Blob radius as a fraction of the smaller grid dimension.
    pub sigma_frac: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_blobs: (2, 4),
            speed: (0.8, 2.0),
            heading: (0.0, std::f64::consts::TAU),
            min_bt: (200.0, 260.0),
            sigma_frac: (0.10, 0.22),
        }
    }
}

const BACKGROUND_K: f64 = 290.0;

/// Render an advecting-blob sequence in kelvin. Deterministic in the
/// specs. The domain is toroidal: blob centers wrap at the edges, so
/// long sequences keep a constant blob population instead of emptying
/// out as blobs drift off-grid.
pub fn gen_synthetic_blobs(
    blobs: &[BlobSpec],
    n_frames: usize,
    rows: usize,
    cols: usize,
) -> Result<FrameSequence> {
    if n_frames == 0 {
        return Err(Error::Empty("n_frames must be >= 1".into()));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let tf = t as f64;
        let mut data = vec![0f32; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut bt = BACKGROUND_K;
                for b in blobs {
                    let cr = b.row + b.vel_row * tf;
                    let cc = b.col + b.vel_col * tf;
                    // Nearest-image distance on the torus.
                    let mut dr = (r as f64 - cr).rem_euclid(rows as f64);
                    if dr > rows as f64 / 2.0 {
                        dr -= rows as f64;
                    }
                    let mut dc = (c as f64 - cc).rem_euclid(cols as f64);
                    if dc > cols as f64 / 2.0 {
                        dc -= cols as f64;
                    }
                    let d2 = dr * dr + dc * dc;
                    let env = (-((tf - b.peak_frame) / b.envelope_tau).powi(2)).exp();
                    let depth = (BACKGROUND_K - b.min_bt) * (0.3 + 0.7 * env);
                    bt -= depth * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                }
                data[r * cols + c] = bt.clamp(180.0, 300.0) as f32;
            }
        }
        frames.push(Field2D::new(rows, cols, Unit::Kelvin, data)?);
    }
    FrameSequence::new(frames)
}

/// Sample blob specs for one sequence from a regime.
pub fn sample_blobs(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    n_frames: usize,
    rows: usize,
    cols: usize,
) -> Vec<BlobSpec> {
    let n = rng.gen_range(cfg.n_blobs.0..=cfg.n_blobs.1);
    let min_dim = rows.min(cols) as f64;
    (0..n)
        .map(|_| {
            let speed = rng.gen_range(cfg.speed.0..cfg.speed.1);
            let heading = rng.gen_range(cfg.heading.0..cfg.heading.1);
            BlobSpec {
                row: rng.gen_range(0.2..0.8) * rows as f64,
                col: rng.gen_range(0.2..0.8) * cols as f64,
                vel_row: (speed * heading.sin()).clamp(-2.0, 2.0),
                vel_col: (speed * heading.cos()).clamp(-2.0, 2.0),
                min_bt: rng.gen_range(cfg.min_bt.0..cfg.min_bt.1),
                sigma: rng.gen_range(cfg.sigma_frac.0..cfg.sigma_frac.1) * min_dim,
                // Peaks sit late (or just past the end) so scene amplitude
                // mostly grows through the sequence.
                peak_frame: rng.gen_range(0.7..1.2) * n_frames as f64,
                envelope_tau: rng.gen_range(0.5..1.0) * n_frames as f64,
            }
        })
        .collect()
}

/// Deterministic synthetic sequence under a given regime.
pub fn gen_synthetic_cfg(
    seed: u64,
    cfg: &SynthConfig,
    n_frames: usize,
    rows: usize,
    cols: usize,
) -> Result<FrameSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = sample_blobs(&mut rng, cfg, n_frames, rows, cols);
    gen_synthetic_blobs(&blobs, n_frames, rows, cols)
}

/// Deterministic synthetic sequence under the default regime.
pub fn gen_synthetic(seed: u64, n_frames: usize, rows: usize, cols: usize) -> Result<FrameSequence> {
    gen_synthetic_cfg(seed, &SynthConfig::default(), n_frames, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Reduction;
    use proptest::prelude::*;
    use rand::Rng;
    use tempfile::tempdir;

    fn seq(frames: usize, rows: usize, cols: usize) -> FrameSequence {
        let fields = (0..frames)
            .map(|f| {
                Field2D::from_fn(rows, cols, Unit::Normalized, |r, c| {
                    (f * rows * cols + r * cols + c) as f32 * 0.25
                })
                .unwrap()
            })
            .collect();
        FrameSequence::new(fields).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.w4cf");
        let s = seq(3, 4, 4);
        save_frames(&s, &path).unwrap();
        assert_eq!(load_frames(&path).unwrap(), s);
    }

    #[test]
    fn save_byte_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.w4cf");
        let f = Field2D::new(2, 2, Unit::Normalized, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        save_frames(&FrameSequence::new(vec![f]).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 19 + 16);
        assert_eq!(&bytes[0..4], b"W4CF");
        assert_eq!(bytes[18], 1); // normalized
        assert_eq!(
            &bytes[19..],
            &[
                0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00,
                0x00, 0x80, 0x40
            ]
        );
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.w4cf");
        std::fs::write(&path, b"XXXX-this-is-not-a-frame-file").unwrap();
        assert!(matches!(load_frames(&path), Err(Error::Format(_))));
    }

    #[test]
    fn empty_file_is_corrupt() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.w4cf");
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_frames(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.w4cf");
        let s = seq(2, 3, 3);
        save_frames(&s, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_frames(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn windows_offset_1() {
        let windows = make_windows(&seq(20, 2, 2), 1).unwrap();
        assert_eq!(windows.len(), 13);
        let w = &windows[0];
        assert_eq!(w.input.frames()[0], seq(20, 2, 2).frames()[0]);
        assert_eq!(w.input.frames()[3], seq(20, 2, 2).frames()[3]);
        assert_eq!(w.target.frames()[0], seq(20, 2, 2).frames()[4]);
        assert_eq!(w.target.frames()[3], seq(20, 2, 2).frames()[7]);
    }

    #[test]
    fn windows_offset_4() {
        let s = seq(20, 2, 2);
        let windows = make_windows(&s, 4).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].target.frames()[0], s.frames()[16]);
        assert_eq!(windows[0].target.frames()[3], s.frames()[19]);
    }

    #[test]
    fn windows_too_short() {
        assert!(make_windows(&seq(7, 2, 2), 1).unwrap().is_empty());
    }

    #[test]
    fn windows_index_arithmetic() {
        // Last input index + 4*(offset-1) + 1 == first target index, checked
        // by content equality against the source sequence.
        let s = seq(30, 2, 2);
        for offset in 1..=4u8 {
            for (i, w) in make_windows(&s, offset).unwrap().iter().enumerate() {
                let t0 = i + 3;
                let first_target = t0 + 4 * (offset as usize - 1) + 1;
                assert_eq!(w.target.frames()[0], s.frames()[first_target]);
            }
        }
    }

    #[test]
    fn synthetic_deterministic() {
        let a = gen_synthetic(42, 8, 16, 16).unwrap();
        let b = gen_synthetic(42, 8, 16, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_range() {
        let s = gen_synthetic(3, 1, 24, 24).unwrap();
        assert_eq!(s.len(), 1);
        let min = s.frames()[0].reduce(Reduction::Min).unwrap();
        let max = s.frames()[0].reduce(Reduction::Max).unwrap();
        assert!(min >= 180.0 && max <= 300.0, "range [{min}, {max}]");
    }

    #[test]
    fn synthetic_blob_advects_with_its_velocity() {
        // Single blob moving one column per frame: the coldest pixel tracks it.
        let blob = BlobSpec {
            row: 16.0,
            col: 6.0,
            vel_row: 0.0,
            vel_col: 1.0,
            min_bt: 210.0,
            sigma: 3.0,
            peak_frame: 4.0,
            envelope_tau: 16.0,
        };
        let s = gen_synthetic_blobs(&[blob], 8, 32, 32).unwrap();
        for t in 0..7 {
            let (_, c0) = s.frames()[t].argmin();
            let (_, c1) = s.frames()[t + 1].argmin();
            let dc = c1 as i64 - c0 as i64;
            assert!((dc - 1).abs() <= 1, "frame {t}: column moved by {dc}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_random_sequences(
            frames in 1usize..4,
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fields: Vec<Field2D> = (0..frames)
                .map(|_| {
                    Field2D::from_fn(rows, cols, Unit::Kelvin, |_, _| {
                        rng.gen_range(-1000.0f32..1000.0)
                    })
                    .unwrap()
                })
                .collect();
            let s = FrameSequence::new(fields).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("p.w4cf");
            save_frames(&s, &path).unwrap();
            prop_assert_eq!(load_frames(&path).unwrap(), s);
        }
    }
}
