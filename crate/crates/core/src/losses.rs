//! Cycle consistency and the weighted generator objective.

use crate::error::{Error, Result};
use crate::image::{lit, mean_abs_diff, ImageTensor, Real};

/// Weights of the rain-guidance, background-guidance, luminance-adversarial
/// and cycle terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w1: 1.0, w2: 5.0, w3: 1.0, w4: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w1, self.w2, self.w3, self.w4]
    }
}

/// Generator-side loss components in weight order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorTerms {
    pub guid_r: f64,
    pub guid_b: f64,
    pub lum_adv_g: f64,
    pub cyc: f64,
}

impl GeneratorTerms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.guid_r, self.guid_b, self.lum_adv_g, self.cyc]
    }
}

/// All scalars reported for one training iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub guid_r: f64,
    pub guid_b: f64,
    pub lum_adv_g: f64,
    pub cyc: f64,
    pub total_g: f64,
    pub d_c: f64,
    pub d_s: f64,
}

impl LossBundle {
    pub const CSV_HEADER: &'static str = "iteration,guid_r,guid_b,lum_adv_g,cyc,total_g,d_c,d_s";

    pub fn csv_row(&self, iteration: u64) -> String {
        format!(
            "{iteration},{},{},{},{},{},{},{}",
            self.guid_r, self.guid_b, self.lum_adv_g, self.cyc, self.total_g, self.d_c, self.d_s
        )
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.guid_r, self.guid_b, self.lum_adv_g, self.cyc, self.total_g, self.d_c, self.d_s]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Mean L1 distance between the reconstruction `G_r(G_c(r))` and `r`.
pub fn cycle_loss<T: Real>(r: &ImageTensor<T>, r_prime: &ImageTensor<T>) -> Result<T> {
    mean_abs_diff(r_prime, r)
}

/// Gradient of [`cycle_loss`] with respect to `r_prime`.
pub fn cycle_loss_grad<T: Real>(r: &ImageTensor<T>, r_prime: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let n = lit::<T>(r.len() as f64);
    r_prime.zip_map(r, |a, b| {
        let d = a - b;
        if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        }
    })
}

/// `w1 * guid_r + w2 * guid_b + w3 * lum_adv_g + w4 * cyc`.
pub fn total_generator_loss(terms: &GeneratorTerms, weights: &LossWeights) -> Result<f64> {
    let names = ["guid_r", "guid_b", "lum_adv_g", "cyc"];
    let values = terms.as_array();
    for (name, v) in names.iter().zip(values) {
        if !v.is_finite() {
            return Err(Error::NonFinite { component: name.to_string() });
        }
    }
    weights.validate()?;
    Ok(values.iter().zip(weights.as_array()).map(|(v, w)| v * w).sum())
}

/// Partial derivatives of the total with respect to each component.
pub fn total_generator_loss_partials(weights: &LossWeights) -> [f64; 4] {
    weights.as_array()
}
