//! Scalar abstraction for the numeric core.
//!
//! Everything in this crate is generic over [`Scalar`] so the same code runs in
//! f32 or f64. The CLI and the reference checks instantiate f64; see the crate
//! root for concrete aliases.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Floating-point scalar usable throughout the numeric core.
///
/// Extends `num_traits::Float` with f64 interchange (checkpoints are stored as
/// f64 regardless of the working precision) and RNG draws, so callers never
/// need distribution trait bounds of their own.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + Sum<Self>
    + Display
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts from f64, panicking only for values outside the type's range.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value not representable in this scalar type")
    }

    /// Widens to f64 for reporting and serialization.
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    /// Draws from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws uniformly from `[lo, hi)`.
    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
                Uniform::new(lo, hi)
                    .expect("uniform bounds must satisfy lo < hi")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);
