//! Floating-point abstraction shared by every model in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for parameters, activations and gradients.
///
/// Implemented for `f32` and `f64`. Gradient checks run in `f64`; the
/// crate-level aliases (`Real`, `Seq2SeqModel`, ...) pick `f64` as well.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short tag written into checkpoints.
    const KIND: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const KIND: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const KIND: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }
}
