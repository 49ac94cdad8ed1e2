//! Rain guidance: streaks removed by the deraining generator are pasted onto
//! an unrelated clean image, and a rain discriminator must not be able to
//! tell the result from a real rainy image.

use crate::adversarial::{bce_mean, bce_mean_grad, check_finite, check_same_len, Target};
use crate::error::Result;
use crate::image::{ImageTensor, Real};

/// Rainy minus derained, elementwise. Not clamped; values lie in `[-1, 1]`
/// when both inputs are in range.
#[derive(Clone, Debug, PartialEq)]
pub struct StreakField<T = f32>(pub ImageTensor<T>);

impl<T: Real> StreakField<T> {
    pub fn image(&self) -> &ImageTensor<T> {
        &self.0
    }
}

pub fn extract_streaks<T: Real>(r: &ImageTensor<T>, c_hat: &ImageTensor<T>) -> Result<StreakField<T>> {
    Ok(StreakField(r.zip_map(c_hat, |a, b| a - b)?))
}

/// Fake rainy image `clamp01(s + c)` built on an unpaired clean image `c`.
pub fn compose_fake_rainy<T: Real>(s: &StreakField<T>, c: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    s.0.zip_map(c, |a, b| (a + b).max(T::zero()).min(T::one()))
}

/// Straight-through mask of the clamp in [`compose_fake_rainy`]: one where
/// `s + c` lies inside `[0, 1]`, zero where it saturated.
pub fn fake_rainy_pass_mask<T: Real>(s: &StreakField<T>, c: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    s.0.zip_map(c, |a, b| {
        let v = a + b;
        if v >= T::zero() && v <= T::one() {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Rain discriminator objective: real rainy images are positives, fake rainy
/// images are negatives. Logits are patch maps; each term is a patch mean.
pub fn rain_guidance_discriminator_loss<T: Real>(real: &[T], fake: &[T]) -> Result<T> {
    check_finite(real, "rain discriminator real logits")?;
    check_finite(fake, "rain discriminator fake logits")?;
    check_same_len(real, fake, "rain discriminator logits")?;
    Ok(bce_mean(real, Target::Real) + bce_mean(fake, Target::Fake))
}

/// Gradients of [`rain_guidance_discriminator_loss`] w.r.t. `(real, fake)`.
pub fn rain_guidance_discriminator_grad<T: Real>(real: &[T], fake: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    rain_guidance_discriminator_loss(real, fake)?;
    Ok((bce_mean_grad(real, Target::Real), bce_mean_grad(fake, Target::Fake)))
}

/// Non-saturating generator side: mean of `-log sigmoid(fake)`.
pub fn rain_guidance_generator_loss<T: Real>(fake: &[T]) -> Result<T> {
    check_finite(fake, "rain generator logits")?;
    Ok(bce_mean(fake, Target::Real))
}

pub fn rain_guidance_generator_grad<T: Real>(fake: &[T]) -> Result<Vec<T>> {
    check_finite(fake, "rain generator logits")?;
    Ok(bce_mean_grad(fake, Target::Real))
}
