//! Unsupervised single-image deraining.
//!
//! A deraining generator is trained from unpaired rainy and clean images with
//! four generator-side objectives: rain guidance (removed streaks pasted onto
//! clean images must look like real rain), background guidance (blurred
//! gradients of input and output must agree across scales), a
//! luminance-adjusting adversarial loss (brightened clean images are extra
//! negatives) and cycle consistency through a lightweight rain-adding
//! generator.

pub mod adversarial;
pub mod blur_gradient;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod luminance;
pub mod metrics;
pub mod networks;
pub mod rain_guidance;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{ImageTensor, LuminanceMap};
