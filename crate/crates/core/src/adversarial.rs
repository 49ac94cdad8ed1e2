//! Numerically stable binary cross-entropy on raw discriminator logits.
//!
//! `-log(sigmoid(z)) = softplus(-z)` and `-log(1 - sigmoid(z)) = softplus(z)`.

use crate::error::{Error, Result};
use crate::image::{lit, Real};

pub fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Which label a logit map is scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Real,
    Fake,
}

pub(crate) fn check_finite<T: Real>(logits: &[T], what: &str) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument(format!("{what}: empty logit map")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { component: what.to_string() });
    }
    Ok(())
}

pub(crate) fn check_same_len<T>(a: &[T], b: &[T], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shapes(format!("{what} {}", a.len()), b.len()));
    }
    Ok(())
}

/// Mean BCE of one logit map against a fixed label.
pub fn bce_mean<T: Real>(logits: &[T], target: Target) -> T {
    let sum = logits.iter().fold(T::zero(), |acc, &z| {
        acc + match target {
            Target::Real => softplus(-z),
            Target::Fake => softplus(z),
        }
    });
    sum / lit(logits.len() as f64)
}

/// Gradient of [`bce_mean`] with respect to each logit.
pub fn bce_mean_grad<T: Real>(logits: &[T], target: Target) -> Vec<T> {
    let n = lit::<T>(logits.len() as f64);
    logits
        .iter()
        .map(|&z| match target {
            Target::Real => (sigmoid(z) - T::one()) / n,
            Target::Fake => sigmoid(z) / n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(-800.0f64), 0.0);
        assert_eq!(softplus(800.0f64), 800.0);
        assert!((softplus(-1.0f64) - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0f64), 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }
}
