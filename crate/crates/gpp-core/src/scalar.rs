//! Scalar abstraction for the numeric core.
//!
//! All simulation, regression, and ODE code is written against [`Scalar`]
//! rather than a concrete float so the same source supports `f32` and `f64`.
//! The trait folds together the `num-traits` float surface with the handful
//! of extras the crate needs: conversion from literal `f64` constants,
//! standard-normal sampling, and thread-safety bounds for parallel loops.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + Sum
    + ScalarOperand
    + LinalgScalar
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts a literal `f64` constant, rounding to the nearest value.
    fn c(value: f64) -> Self;

    /// Converts to `f64` for reporting.
    fn to_f64(self) -> f64;

    /// Draws one standard-normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn c(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    #[inline]
    fn c(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_round_trips_for_f64() {
        assert_eq!(f64::c(0.1), 0.1);
        assert_eq!(0.25f64.to_f64(), 0.25);
    }

    #[test]
    fn f32_conversion_rounds() {
        let x = f32::c(1.0 / 3.0);
        assert!((x as f64 - 1.0 / 3.0).abs() < 1e-7);
    }
}
