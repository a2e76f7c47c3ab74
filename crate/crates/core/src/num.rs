//! Scalar abstraction shared by grids, tensors and the fused map.
//!
//! Everything numeric in this crate is generic over [`Real`], implemented for
//! `f32` (storage and training) and `f64` (gradient checks and oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumCast + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn of(x: f64) -> Self;

    /// Widening conversion used for accumulation.
    fn wide(self) -> f64;

    const NAME: &'static str;
}

impl Real for f32 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn wide(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn wide(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}
