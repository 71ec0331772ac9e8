//! Numeric abstractions shared by the model code.
//!
//! Everything that does floating-point math (the autoencoder, rejection
//! sampling, matching, partitioning) is written against [`Scalar`] so the
//! same code runs in `f32` or `f64`. Discrete probability tables only need
//! field arithmetic and are written against [`Probability`], which also
//! admits exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
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
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// `log(1 + exp(x))` without overflow.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// Logistic function.
    #[inline]
    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Probability values in conditional probability tables.
///
/// `f64` is the working type; `Ratio<i64>` gives exact products for small
/// hand-specified networks.
pub trait Probability:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Display + FromStr + Send + Sync + 'static
{
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Probability for f32 {}
impl Probability for f64 {}
impl Probability for num_rational::Ratio<i64> {}
