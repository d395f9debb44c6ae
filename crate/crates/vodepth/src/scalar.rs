//! Scalar abstraction: every numeric path in the crate is generic over a
//! floating-point type so the same code runs in 32-bit (training) and 64-bit
//! (verification) precision.

use num_traits::{Float, NumAssign};

pub trait Scalar:
    Float + NumAssign + Default + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
