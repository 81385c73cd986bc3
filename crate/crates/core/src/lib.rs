//! Generative convolution (GConv) layers with a small reverse-mode autodiff
//! engine, GAN training utilities, evaluation metrics, and the reference
//! generator/discriminator architectures.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Activation, Gradients, Padding, Tape, Tensor, Var};
