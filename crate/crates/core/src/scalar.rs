//! Floating-point scalar abstraction.
//!
//! All numeric code in the crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Values that leave the numeric core
//! (metric logs, reports, model files) are widened to `f64`, which is exact
//! for both implementations.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short name used in file headers and reports.
    const NAME: &'static str;

    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    /// Widens to `f64`.
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Squared Euclidean distance between two equally long slices.
#[inline]
pub fn sq_dist<F: Scalar>(a: impl IntoIterator<Item = F>, b: impl IntoIterator<Item = F>) -> F {
    a.into_iter()
        .zip(b)
        .fold(F::zero(), |acc, (x, y)| {
            let d = x - y;
            acc + d * d
        })
}

/// Orders two scalars, treating incomparable values as equal.
#[inline]
pub fn cmp<F: Scalar>(a: F, b: F) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}
