//! Minimal differentiable tensor engine.
//!
//! Forward and analytic-gradient computation for every layer the
//! autoencoder needs (conv2d, batch norm, ReLU, sigmoid, 2x2 max pool,
//! 2x nearest upsample, dropout), the MSE loss, the Adam optimizer and a
//! finite-difference gradient checker. No computation graph: layers cache
//! what their backward pass needs and are driven in sequence by the model.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod gradcheck;
mod layer;
mod loss;
mod optim;
mod pool;

pub use activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnBatchStats, BnCache};
pub use conv::{conv2d_backward, conv2d_forward, conv_out_extent, ConvGrads};
pub use dropout::{dropout_backward, dropout_forward};
pub use gradcheck::{grad_check, grad_check_layers, GradCheckReport};
pub use layer::{Init, Layer, LayerSpec, Mode};
pub use loss::mse_loss;
pub use optim::{adam_step, AdamParams, Parameter};
