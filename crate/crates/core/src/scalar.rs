//! Floating point abstraction for the learning stack.
//!
//! Networks, optimizers and the diffusion policy are written once against
//! [`Scalar`] and instantiated for `f32` (training and deployment) and `f64`
//! (gradient verification).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
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
    /// Byte width used by the checkpoint format.
    const WIDTH: u8;

    /// Lossy conversion from an `f64` literal.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// Standard normal draw. Always consumes one `f64` sample so the random
    /// stream is identical across scalar types.
    fn normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let z: f64 = rng.sample(StandardNormal);
        Self::of(z)
    }
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
