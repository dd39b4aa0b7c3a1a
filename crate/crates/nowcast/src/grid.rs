//! Dense 2D/3D real-valued grid types and elementwise/reduction primitives.
//!
//! Layout is row-major everywhere, t-major for volumes. Values are stored
//! as `f32`; reductions accumulate in `f64`. A [`Unit`] tag carries the
//! physical meaning of the values and is checked at module boundaries, not
//! per arithmetic operation.

use crate::error::{Error, Result};

/// Physical meaning of the values stored in a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    /// Brightness temperature in kelvin.
    Kelvin,
    /// Dimensionless, nominally [0, 1] after dividing by 300.
    Normalized,
    /// Rainfall rate in mm/h.
    MmPerH,
    /// Accumulated rainfall in mm.
    Mm,
}

/// Reduction kinds supported by [`Field2D::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Max,
    Min,
    Mean,
}

/// A single-channel 2D grid of finite real values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    rows: usize,
    cols: usize,
    unit: Unit,
    data: Vec<f32>,
}

impl Field2D {
    /// Build a field from row-major data. Rejects length mismatches and
    /// non-finite values.
    pub fn new(rows: usize, cols: usize, unit: Unit, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "field data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in field".into()));
        }
        Ok(Self { rows, cols, unit, data })
    }

    /// Constant field.
    pub fn constant(rows: usize, cols: usize, unit: Unit, value: f32) -> Result<Self> {
        Self::new(rows, cols, unit, vec![value; rows * cols])
    }

    /// Build a field by evaluating `f(row, col)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        unit: Unit,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, unit, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    /// Elementwise application of a total scalar function. The caller
    /// declares the unit of the result.
    pub fn map(&self, unit: Unit, g: impl Fn(f32) -> f32) -> Result<Self> {
        let data: Vec<f32> = self.data.iter().map(|&v| g(v)).collect();
        Self::new(self.rows, self.cols, unit, data)
    }

    /// Exact reduction over all cells; accumulation in f64.
    pub fn reduce(&self, op: Reduction) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Empty("reduce over empty field".into()));
        }
        Ok(match op {
            Reduction::Sum => self.data.iter().map(|&v| v as f64).sum(),
            Reduction::Mean => {
                let s: f64 = self.data.iter().map(|&v| v as f64).sum();
                s / self.data.len() as f64
            }
            Reduction::Max => self.data.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64)),
            Reduction::Min => self.data.iter().fold(f64::INFINITY, |a, &v| a.min(v as f64)),
        })
    }

    /// Position of the minimum value, scan order ties to the first.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, &v) in self.data.iter().enumerate() {
            if v < self.data[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }
}

/// Time-ordered stack of homogeneous frames at a fixed 15-minute step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Field2D>,
}

impl FrameSequence {
    pub const STEP_MINUTES: u32 = 15;

    /// All frames must share shape and unit; the sequence must be non-empty.
    pub fn new(frames: Vec<Field2D>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("frame sequence must be non-empty".into()))?;
        let (r, c, u) = (first.rows(), first.cols(), first.unit());
        for (i, f) in frames.iter().enumerate() {
            if f.rows() != r || f.cols() != c || f.unit() != u {
                return Err(Error::ShapeMismatch(format!(
                    "frame {} has shape {}x{} ({:?}), expected {}x{} ({:?})",
                    i,
                    f.rows(),
                    f.cols(),
                    f.unit(),
                    r,
                    c,
                    u
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Field2D] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.frames[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.frames[0].cols()
    }

    pub fn unit(&self) -> Unit {
        self.frames[0].unit()
    }
}

/// A t-major stack of 2D grids, used by the event-detection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    t: usize,
    rows: usize,
    cols: usize,
    unit: Unit,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(t: usize, rows: usize, cols: usize, unit: Unit, data: Vec<f32>) -> Result<Self> {
        if data.len() != t * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "volume data length {} != {}x{}x{}",
                data.len(),
                t,
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in volume".into()));
        }
        Ok(Self { t, rows, cols, unit, data })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, t: usize, row: usize, col: usize) -> f32 {
        self.data[(t * self.rows + row) * self.cols + col]
    }
}

/// Stack a frame sequence into a t-major volume, preserving data order.
pub fn stack_to_volume(seq: &FrameSequence) -> Volume3D {
    let mut data = Vec::with_capacity(seq.len() * seq.rows() * seq.cols());
    for f in seq.frames() {
        data.extend_from_slice(f.data());
    }
    Volume3D {
        t: seq.len(),
        rows: seq.rows(),
        cols: seq.cols(),
        unit: seq.unit(),
        data,
    }
}
