//! Scalar abstraction over the stored float width.
//!
//! Arithmetic is written in `f64`; `Real` only mediates loads and stores,
//! so the `f32` and `f64` instantiations run the same algorithm and differ
//! only in storage rounding.

pub trait Real: Copy + Send + Sync + PartialOrd + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Real for f32 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}
