//! Float abstraction so the network runs in f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps};

/// Scalar type of the network parameters: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssignOps + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants in the math code.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Lossy conversion to `f64`, used when reporting losses and scores.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
