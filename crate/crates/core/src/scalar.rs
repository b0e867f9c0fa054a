//! Scalar abstraction for the model and loss math.
//!
//! Everything numeric in [`crate::policy`] and [`crate::dpo`] is generic over
//! [`Scalar`] so the same code runs in `f32` or `f64`. The training pipeline
//! and the snapshot format use `f64` (see the `Policy` alias at the crate
//! root); `f32` is available for experiments where precision headroom does
//! not matter.

use num_traits::Float;
use num_traits::NumAssignOps;
use std::fmt::{Debug, Display};

/// Floating-point scalar usable by the policy network and the preference loss.
pub trait Scalar:
    Float + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` configuration value.
    fn from_f64(value: f64) -> Self;

    /// Widening (or identity) conversion used by serialization and metrics.
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(value: f64) -> Self {
        value as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(value: f64) -> Self {
        value
    }

    fn to_f64(self) -> f64 {
        self
    }
}

/// Numerically stable softplus, `ln(1 + e^z)`.
///
/// Computed as `max(z, 0) + ln(1 + e^{-|z|})` so neither branch overflows:
/// `softplus(1000)` is `1000` and `softplus(-1000)` underflows to `0`
/// instead of producing `inf`/`nan`.
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic function `1 / (1 + e^{-z})`, evaluated through the
/// overflow-safe branch for negative arguments.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_reference_values() {
        // Frozen from a 30-digit evaluation of ln(1 + e^z).
        assert!((softplus(-2.0f64) - 0.126928011042972496).abs() < 1e-15);
        assert!((softplus(2.0f64) - 2.126928011042972496).abs() < 1e-15);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((softplus(-7.0f64) - 9.11466453774244691e-4).abs() < 1e-15);
    }

    #[test]
    fn softplus_extremes_stay_finite() {
        assert_eq!(softplus(1e4f64), 1e4);
        assert_eq!(softplus(-1e4f64), 0.0);
        assert!(softplus(1e4f64).is_finite());
    }

    #[test]
    fn sigmoid_symmetry() {
        for z in [-30.0, -2.0, -0.5, 0.0, 0.5, 2.0, 30.0f64] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
