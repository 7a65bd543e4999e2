use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numeric core is generic over.
///
/// The tolerances are per-precision: the eigensolver and the spectrum clamp
/// cannot be asked for `1e-12` in single precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Relative off-diagonal tolerance for the Jacobi eigensolver.
    const EIG_TOL: Self;
    /// Eigenvalues below `SPECTRUM_CLAMP * lambda_max` are treated as zero.
    const SPECTRUM_CLAMP: Self;

    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const EIG_TOL: f64 = 1e-12;
    const SPECTRUM_CLAMP: f64 = 1e-12;

    #[inline]
    fn lit(v: f64) -> f64 {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const EIG_TOL: f32 = 1e-6;
    const SPECTRUM_CLAMP: f32 = 1e-6;

    #[inline]
    fn lit(v: f64) -> f32 {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
