//! Floating-point abstraction so the same kernels run in f64 (oracles, tests)
//! and f32 (training, checkpoints).

use num_traits::{Float, NumAssign};

pub trait Scalar:
    Float + NumAssign + Default + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}
