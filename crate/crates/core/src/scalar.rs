//! Scalar abstraction shared by every module.
//!
//! Bounding on `nalgebra::RealField` (rather than `num_traits::Float`) keeps
//! method calls like `.sqrt()` unambiguous when both traits are in scope.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the core math is generic over.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync
{
    /// Converts an `f64` literal; panics only for values outside the type's
    /// range, which never happens for the constants used here.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Lossy view as `f64`, for reporting and file output.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_round_trip() {
        assert_eq!(f64::of(0.25), 0.25);
        assert_eq!(f32::of(0.25), 0.25_f32);
        assert_eq!(f64::of_usize(7), 7.0);
        assert_eq!(1.5_f64.as_f64(), 1.5);
    }
}
