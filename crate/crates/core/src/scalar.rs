//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar the geometry, fusion and raycasting code is generic over.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + serde::Serialize
    + for<'de> serde::Deserialize<'de>
    + 'static
{
    /// Converts an `f64` literal. Every `f64` is representable (possibly rounded) in
    /// the implementing types, so this never fails.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("usize representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.002), 0.002);
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f32::of_usize(3).as_f64(), 3.0);
    }
}
