use std::fmt::{Debug, Display};

/// Floating-point element type for tensors. f32 is the training default;
/// f64 is used for finite-difference gradient checks, where f32 noise
/// drowns the signal.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Copy + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
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
