//! Scalar abstraction so the numerical core works at f32 or f64.
//!
//! Everything downstream (networks, VAE, regressor, metrics) is generic over
//! [`Scalar`]; the crate root exports f64 aliases, which is what the CLI and
//! the reference tests use.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{de::DeserializeOwned, Serialize};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Draw from the standard normal distribution.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from the half-open interval `[lo, hi)`.
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;

    fn from_count(n: usize) -> Self {
        Self::from_f64(n as f64).unwrap()
    }

    fn c(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f64 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("invalid uniform bounds").sample(rng)
    }
}

impl Scalar for f32 {
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new(lo, hi).expect("invalid uniform bounds").sample(rng)
    }
}
