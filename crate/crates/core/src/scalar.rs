use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the differentiable core is generic over: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    /// Lossy widening to `f64`, used for logs, reports and checkpoints.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable logistic function, `1 / (1 + exp(-z))`.
pub fn logistic<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Stable `log(logistic(z)) = min(z, 0) - ln(1 + exp(-|z|))`.
pub fn log_logistic<T: Scalar>(z: T) -> T {
    z.min(T::zero()) - (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_reference_values() {
        assert_eq!(logistic(0.0_f64), 0.5);
        assert!((logistic(1.0_f64) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((logistic(-1.0_f64) - (1.0 - 0.731_058_578_630_004_9)).abs() < 1e-15);
        assert_eq!(logistic(0.0_f32), 0.5);
    }

    #[test]
    fn log_logistic_is_stable_in_the_tails() {
        assert!((log_logistic(0.0_f64) + std::f64::consts::LN_2).abs() < 1e-16);
        assert!(log_logistic(-800.0_f64).is_finite());
        assert!((log_logistic(-800.0_f64) + 800.0).abs() < 1e-9);
        assert_eq!(log_logistic(800.0_f64), 0.0);
        for z in [-3.0, -0.5, 0.25, 2.0] {
            let direct = logistic(z).ln();
            assert!((log_logistic(z) - direct).abs() < 1e-14);
        }
    }
}
