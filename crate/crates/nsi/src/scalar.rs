//! Scalar abstraction so the numeric core works over f32 or f64.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Real scalar type usable throughout the estimator and simulator.
pub trait Scalar:
    nalgebra::RealField + num_traits::ToPrimitive + Copy + Default + std::fmt::Display
{
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;
    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Infallible narrowing conversion (f32 rounds).
    fn of_f64(x: f64) -> Self;

    fn of_usize(x: usize) -> Self {
        Self::of_f64(x as f64)
    }
    fn to_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new_inclusive(lo, hi).sample(rng)
    }
    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn of_f64(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
        Uniform::new_inclusive(lo, hi).sample(rng)
    }
    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn of_f64(x: f64) -> Self {
        x
    }
}
