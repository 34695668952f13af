//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type for tensors, parameters and losses.
///
/// Implemented for `f32` (the training precision) and `f64` (useful for
/// tighter numerical checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short type tag used in diagnostics.
    const NAME: &'static str;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Narrowing conversion used by the checkpoint payload.
    fn to_f32_lossy(self) -> f32;

    fn from_single(v: f32) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn to_f32_lossy(self) -> f32 {
                self as f32
            }

            #[inline]
            fn from_single(v: f32) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32, "f32");
impl_scalar!(f64, "f64");
