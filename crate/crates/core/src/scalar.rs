//! Scalar abstraction: the numeric element type for features and all
//! derived quantities (f32 or f64, declared per dataset manifest).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type for embeddings and linear algebra.
///
/// Implemented for `f32` and `f64`. Code that is generic over `Scalar`
/// must produce the same results for both types up to precision.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact whenever the value is representable.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to `f64` (exact for f32 and f64).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
