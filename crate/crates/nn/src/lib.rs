//! A compact convolutional network engine for CPU training.
//!
//! Every layer implements [`Module`] with an explicit forward pass that caches
//! what its backward pass needs. Tensors are dense `f32` in NCHW order. The
//! engine is single-threaded, so identical inputs and seeds give bit-identical
//! results.

mod conv;
mod error;
mod init;
mod layers;
mod module;
mod optim;
mod param;
mod serialize;
mod tensor;

pub use conv::Conv2d;
pub use error::NnError;
pub use init::{he_normal, seeded_rng};
pub use layers::{InstanceNorm, LeakyRelu, ReflectPad, Relu, Residual, Upsample2};
pub use module::{Backward, Mode, Module, Sequential};
pub use optim::{Adam, AdamState};
pub use param::{grad_norm, param_count, zero_grads, Param};
pub use serialize::{read_params, write_params};
pub use tensor::{Shape, Tensor};
