//! A from-scratch learned image codec for 32x32 RGB images.
//!
//! The crate bundles a minimal differentiable tensor engine ([`nn`]), the
//! eight-convolution autoencoder built on it ([`model`]), a self-contained
//! JPEG-style baseline codec ([`jpeg`]), image quality metrics ([`metrics`]),
//! CIFAR-10 binary / PPM data handling ([`data`]) and the training loop
//! ([`train`]).

pub mod nn;
pub mod rng;
pub mod tensor;

pub use tensor::Tensor;
