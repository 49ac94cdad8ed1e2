//! Luminance-adjusting adversarial loss.
//!
//! Brightened copies of clean images form an extra negative class for the
//! clean-image discriminator, so derained outputs are not rewarded for being
//! brighter than real clean images. Brightening is a per-channel power law
//! `v -> v^gamma` with `gamma` in `(0, 1)`.

use crate::adversarial::{bce_mean, bce_mean_grad, check_finite, check_same_len, Target};
use crate::error::{Error, Result};
use crate::image::{lit, ImageTensor, Real};

pub const DEFAULT_LUM_GAMMA: f64 = 0.6;

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("luminance gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// Per-channel power law. Fixes 0 and 1, strictly brightens everything between.
pub fn enhance_luminance<T: Real>(c: &ImageTensor<T>, gamma: f64) -> Result<ImageTensor<T>> {
    check_gamma(gamma)?;
    let g = lit::<T>(gamma);
    Ok(c.map(|v| v.max(T::zero()).min(T::one()).powf(g)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CachePolicy {
    OnTheFly,
    Precomputed,
}

/// Produces the brightened negative for any clean image. With
/// [`CachePolicy::Precomputed`] negatives are built once per clean index.
#[derive(Clone, Debug)]
pub struct NegativeSampleSet {
    gamma: f64,
    policy: CachePolicy,
    cache: Vec<ImageTensor<f32>>,
}

impl NegativeSampleSet {
    pub fn new(gamma: f64, policy: CachePolicy) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(NegativeSampleSet { gamma, policy, cache: Vec::new() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    /// Builds the cache from the whole clean set (only for the precomputed policy).
    pub fn precompute(&mut self, clean: &[ImageTensor<f32>]) -> Result<()> {
        if self.policy == CachePolicy::Precomputed {
            self.cache = clean.iter().map(|c| enhance_luminance(c, self.gamma)).collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// Negative for clean sample `index` whose pixels are `clean`.
    pub fn negative(&self, index: usize, clean: &ImageTensor<f32>) -> Result<ImageTensor<f32>> {
        match self.cache.get(index) {
            Some(e) if self.policy == CachePolicy::Precomputed && e.dims() == clean.dims() => Ok(e.clone()),
            _ => enhance_luminance(clean, self.gamma),
        }
    }
}

/// Clean-image discriminator objective. Clean images are the only positive
/// class; brightened negatives (when present) and derained outputs are
/// negatives. Each term is a patch mean.
pub fn lum_adv_discriminator_loss<T: Real>(clean: &[T], enhanced: Option<&[T]>, derained: &[T]) -> Result<T> {
    check_finite(clean, "clean discriminator clean logits")?;
    check_finite(derained, "clean discriminator derained logits")?;
    check_same_len(clean, derained, "clean discriminator logits")?;
    let mut loss = bce_mean(clean, Target::Real) + bce_mean(derained, Target::Fake);
    if let Some(e) = enhanced {
        check_finite(e, "clean discriminator enhanced logits")?;
        check_same_len(clean, e, "clean discriminator logits")?;
        loss = loss + bce_mean(e, Target::Fake);
    }
    Ok(loss)
}

pub type LumDiscriminatorGrads<T> = (Vec<T>, Option<Vec<T>>, Vec<T>);

/// Gradients of [`lum_adv_discriminator_loss`] w.r.t. `(clean, enhanced, derained)`.
pub fn lum_adv_discriminator_grad<T: Real>(
    clean: &[T],
    enhanced: Option<&[T]>,
    derained: &[T],
) -> Result<LumDiscriminatorGrads<T>> {
    lum_adv_discriminator_loss(clean, enhanced, derained)?;
    Ok((
        bce_mean_grad(clean, Target::Real),
        enhanced.map(|e| bce_mean_grad(e, Target::Fake)),
        bce_mean_grad(derained, Target::Fake),
    ))
}

/// Non-saturating generator side: mean of `-log sigmoid(derained)`.
pub fn lum_adv_generator_loss<T: Real>(derained: &[T]) -> Result<T> {
    check_finite(derained, "clean generator logits")?;
    Ok(bce_mean(derained, Target::Real))
}

pub fn lum_adv_generator_grad<T: Real>(derained: &[T]) -> Result<Vec<T>> {
    check_finite(derained, "clean generator logits")?;
    Ok(bce_mean_grad(derained, Target::Real))
}
