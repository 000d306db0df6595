//! Scalar abstraction for the numeric kernel.
//!
//! Everything downstream (covariance sums, slow-variation probes, field
//! synthesis, Monte Carlo statistics) is generic over [`Scalar`]. The trait
//! bundles the float arithmetic from `num-traits` with the few operations
//! that have no generic implementation: drawing standard normal / uniform
//! variates and the complementary error function. `f64` is the working type
//! of the CLI; `f32` exists to keep the kernel honest about genericity.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftNum;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating scalar usable across the whole pipeline (FFT synthesis included).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Sum<Self>
    + Serialize
    + DeserializeOwned
    + fmt::Display
    + fmt::Debug
    + Send
    + Sync
    + 'static
{
    /// Draws one standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws one uniform variate on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Complementary error function.
    fn erfc(self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample::<$t, _>(StandardNormal)
            }

            fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }

            fn erfc(self) -> Self {
                statrs::function::erf::erfc(self as f64) as $t
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Converts an `f64` constant into `F`. Panics only if `F` cannot represent
/// any finite value, which no implementor does.
#[inline]
pub fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 constant must convert into the scalar type")
}

/// Converts a lattice integer into `F`.
#[inline]
pub fn cast_i64<F: Scalar>(x: i64) -> F {
    F::from_i64(x).expect("i64 must convert into the scalar type")
}

/// Compensated (Neumaier) accumulator. Long slowly decaying covariance sums
/// lose digits under naive accumulation; every lattice sum in this crate
/// funnels through this type.
#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<F> {
    sum: F,
    compensation: F,
}

impl<F: Scalar> CompensatedSum<F> {
    pub fn new() -> Self {
        CompensatedSum {
            sum: F::zero(),
            compensation: F::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, v: F) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> F {
        self.sum + self.compensation
    }
}

impl<F: Scalar> Default for CompensatedSum<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> FromIterator<F> for CompensatedSum<F> {
    fn from_iter<I: IntoIterator<Item = F>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn csum<F: Scalar, I: IntoIterator<Item = F>>(iter: I) -> F {
    iter.into_iter().collect::<CompensatedSum<F>>().value()
}
