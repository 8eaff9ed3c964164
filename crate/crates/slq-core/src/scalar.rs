//! Scalar abstraction for the numerical kernels.
//!
//! Every solver in this crate is generic over a floating-point scalar, so the
//! same kernels run in `f64` (the reference precision used by the CLI and the
//! acceptance tolerances) or `f32`. The trait is a thin bound over the
//! `num-traits` float hierarchy plus the conversions the sweeps need; the
//! crate root re-exports `f64` aliases for the main types.

use num_traits::{Float, FloatConst, NumAssignOps};

/// Floating-point scalar usable by all kernels in this crate.
pub trait Scalar:
    Float + FloatConst + NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Conversion from `f64`, used for grid arithmetic and tolerances.
    #[inline]
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 -> scalar conversion failed")
    }

    /// Conversion from `usize`, used for probabilities and averages.
    #[inline]
    fn from_usize(n: usize) -> Self {
        <Self as num_traits::NumCast>::from(n).expect("usize -> scalar conversion failed")
    }

    /// Lossy view as `f64` for reporting.
    #[inline]
    fn to_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("scalar -> f64 conversion failed")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::one() / Self::two()
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + NumAssignOps
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}

/// Relative gap `|a - b| / max(1, |a|, |b|)`: absolute near zero, relative
/// for large magnitudes. Every residual tolerance in the crate is stated in
/// this measure.
#[inline]
pub fn rel_gap<T: Scalar>(a: T, b: T) -> T {
    let scale = T::one().max(a.abs()).max(b.abs());
    (a - b).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::from_f64(1.5), 1.5);
        assert_eq!(f32::from_f64(0.25), 0.25f32);
        assert_eq!(f64::from_usize(8), 8.0);
        assert_eq!(f64::half(), 0.5);
        assert_eq!(f32::two(), 2.0f32);
    }

    #[test]
    fn rel_gap_is_absolute_near_zero_and_relative_far_out() {
        assert_eq!(rel_gap(0.0, 1e-13), 1e-13);
        assert!((rel_gap(2e6, 1e6) - 0.5).abs() < 1e-15);
        assert_eq!(rel_gap(3.25f32, 3.25f32), 0.0);
    }
}
