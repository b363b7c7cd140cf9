use std::fmt::Debug;

use num_traits::{Float, FloatConst};

/// Floating point type usable for feature storage and the per-event hot loop.
///
/// Arithmetic that must agree across precisions (temporal coding, expiry
/// keys) is carried out in `f64` and narrowed once at the end.
pub trait Real: Float + FloatConst + Debug + Default + Send + Sync + 'static {
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Largest representable value strictly below one.
    fn below_one() -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn below_one() -> Self {
        1.0 - f32::EPSILON / 2.0
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    fn below_one() -> Self {
        1.0 - f64::EPSILON / 2.0
    }
}
