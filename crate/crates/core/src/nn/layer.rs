//! Layer descriptors and the stateful layers built from them.
//!
//! A [`LayerSpec`] is the declarative description (kind plus
//! hyperparameters); [`LayerSpec::build`] turns it into a [`Layer`] with
//! seeded parameters. Layers cache whatever their backward pass needs
//! between `forward_train` and `backward`; `infer` is pure and never
//! touches state.

use super::activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnCache};
use super::conv::{conv2d_backward, conv2d_forward};
use super::dropout::{dropout_backward, dropout_forward};
use super::optim::Parameter;
use super::pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_forward};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, ShapeError, Tensor};

/// Weight initialization family for conv layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in [-b, b] with b = sqrt(6 / fan_in); for layers feeding ReLU.
    HeUniform,
    /// Uniform in [-b, b] with b = sqrt(6 / (fan_in + fan_out)); for the
    /// sigmoid output layer.
    GlorotUniform,
}

/// Declarative layer description.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
    },
    BatchNorm {
        channels: usize,
        momentum: f64,
        epsilon: f64,
    },
    Relu,
    Sigmoid,
    MaxPool2,
    Upsample2,
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    /// 3x3 "same" convolution, the only conv shape the autoencoder uses.
    pub fn conv_same(in_channels: usize, out_channels: usize, init: Init) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            init,
        }
    }

    pub fn batchnorm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if out_channels < 1 || in_channels < 1 {
                    return Err(ShapeError::Invalid("conv needs at least one channel".into()));
                }
                if kernel % 2 == 0 {
                    return Err(ShapeError::Invalid(format!(
                        "conv kernel {kernel} must be odd"
                    )));
                }
                if stride == 0 {
                    return Err(ShapeError::Invalid("conv stride must be positive".into()));
                }
                Ok(())
            }
            LayerSpec::BatchNorm { channels, epsilon, .. } => {
                if channels == 0 {
                    return Err(ShapeError::Invalid("batch norm needs channels".into()));
                }
                if epsilon <= 0.0 {
                    return Err(ShapeError::Invalid("epsilon must be positive".into()));
                }
                Ok(())
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(ShapeError::Invalid(format!(
                        "dropout rate {rate} outside [0, 1)"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Instantiates the layer, drawing any initial parameters from `rng`.
    pub fn build<T: Scalar>(&self, rng: &mut SplitMix64) -> Result<Layer<T>, ShapeError> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                init,
            } => {
                let fan_in = (in_channels * kernel * kernel) as f64;
                let fan_out = (out_channels * kernel * kernel) as f64;
                let bound = match init {
                    Init::HeUniform => (6.0 / fan_in).sqrt(),
                    Init::GlorotUniform => (6.0 / (fan_in + fan_out)).sqrt(),
                };
                let n = out_channels * in_channels * kernel * kernel;
                let data: Vec<T> = (0..n)
                    .map(|_| T::from_f64_lossy(rng.uniform(-bound, bound)))
                    .collect();
                let weights = Tensor::new(
                    vec![out_channels, in_channels, kernel, kernel],
                    data,
                )?;
                Layer::Conv(ConvLayer {
                    weights: Parameter::new(weights),
                    bias: Parameter::new(Tensor::zeros(vec![out_channels])),
                    stride,
                    padding,
                    cached_input: None,
                })
            }
            LayerSpec::BatchNorm {
                channels,
                momentum,
                epsilon,
            } => Layer::BatchNorm(BnLayer {
                gamma: Parameter::new(Tensor::full(vec![channels], T::one())),
                beta: Parameter::new(Tensor::zeros(vec![channels])),
                running_mean: Tensor::zeros(vec![channels]),
                running_var: Tensor::full(vec![channels], T::one()),
                momentum,
                epsilon,
                cache: None,
            }),
            LayerSpec::Relu => Layer::Relu(ReluLayer { cached_output: None }),
            LayerSpec::Sigmoid => Layer::Sigmoid(SigmoidLayer { cached_output: None }),
            LayerSpec::MaxPool2 => Layer::MaxPool(MaxPoolLayer { cache: None }),
            LayerSpec::Upsample2 => Layer::Upsample,
            LayerSpec::Dropout { rate } => Layer::Dropout(DropoutLayer {
                rate,
                seed: rng.next_u64(),
                calls: 0,
                mask: None,
            }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone)]
pub struct ConvLayer<T> {
    pub weights: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
    cached_input: Option<Tensor<T>>,
}

#[derive(Clone)]
pub struct BnLayer<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Clone)]
pub struct ReluLayer<T> {
    cached_output: Option<Tensor<T>>,
}

#[derive(Clone)]
pub struct SigmoidLayer<T> {
    cached_output: Option<Tensor<T>>,
}

#[derive(Clone)]
pub struct MaxPoolLayer {
    cache: Option<(Vec<u32>, Vec<usize>)>,
}

#[derive(Clone)]
pub struct DropoutLayer<T> {
    pub rate: f64,
    pub seed: u64,
    pub calls: u64,
    mask: Option<Vec<T>>,
}

/// One stateful layer of the network.
#[derive(Clone)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    BatchNorm(BnLayer<T>),
    Relu(ReluLayer<T>),
    Sigmoid(SigmoidLayer<T>),
    MaxPool(MaxPoolLayer),
    Upsample,
    Dropout(DropoutLayer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv2d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::Sigmoid(_) => "sigmoid",
            Layer::MaxPool(_) => "maxpool2",
            Layer::Upsample => "upsample2",
            Layer::Dropout(_) => "dropout",
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ShapeError> {
        match mode {
            Mode::Train => self.forward_train(input),
            Mode::Infer => self.infer(input),
        }
    }

    /// Forward pass that caches activations for [`Layer::backward`].
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        match self {
            Layer::Conv(l) => {
                let out = conv2d_forward(
                    input,
                    &l.weights.value,
                    &l.bias.value,
                    l.stride,
                    l.padding,
                )?;
                l.cached_input = Some(input.clone());
                Ok(out)
            }
            Layer::BatchNorm(l) => {
                let (out, cache) = batchnorm_forward(
                    input,
                    &l.gamma.value,
                    &l.beta.value,
                    &mut l.running_mean,
                    &mut l.running_var,
                    true,
                    l.momentum,
                    l.epsilon,
                )?;
                l.cache = cache;
                Ok(out)
            }
            Layer::Relu(l) => {
                let out = relu_forward(input);
                l.cached_output = Some(out.clone());
                Ok(out)
            }
            Layer::Sigmoid(l) => {
                let out = sigmoid_forward(input);
                l.cached_output = Some(out.clone());
                Ok(out)
            }
            Layer::MaxPool(l) => {
                let (out, argmax) = maxpool2_forward(input)?;
                l.cache = Some((argmax, input.shape().to_vec()));
                Ok(out)
            }
            Layer::Upsample => upsample2_forward(input),
            Layer::Dropout(l) => {
                let (out, mask) = dropout_forward(input, l.rate, true, l.seed, l.calls)?;
                l.calls += 1;
                l.mask = mask;
                Ok(out)
            }
        }
    }

    /// Pure inference pass: no caches, no running-stat updates, dropout is
    /// an identity.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        match self {
            Layer::Conv(l) => conv2d_forward(
                input,
                &l.weights.value,
                &l.bias.value,
                l.stride,
                l.padding,
            ),
            Layer::BatchNorm(l) => {
                let mut rm = l.running_mean.clone();
                let mut rv = l.running_var.clone();
                let (out, _) = batchnorm_forward(
                    input,
                    &l.gamma.value,
                    &l.beta.value,
                    &mut rm,
                    &mut rv,
                    false,
                    l.momentum,
                    l.epsilon,
                )?;
                Ok(out)
            }
            Layer::Relu(_) => Ok(relu_forward(input)),
            Layer::Sigmoid(_) => Ok(sigmoid_forward(input)),
            Layer::MaxPool(_) => Ok(maxpool2_forward(input)?.0),
            Layer::Upsample => upsample2_forward(input),
            Layer::Dropout(l) => Ok(dropout_forward(input, l.rate, false, l.seed, l.calls)?.0),
        }
    }

    /// Backward pass from the most recent `forward_train`. Accumulates
    /// parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
        match self {
            Layer::Conv(l) => {
                let input = l
                    .cached_input
                    .take()
                    .ok_or_else(|| ShapeError::Invalid("conv backward before forward".into()))?;
                let grads = conv2d_backward(
                    grad_out,
                    &input,
                    &l.weights.value,
                    l.stride,
                    l.padding,
                )?;
                l.weights.accumulate_grad(&grads.weights)?;
                l.bias.accumulate_grad(&grads.bias)?;
                Ok(grads.input)
            }
            Layer::BatchNorm(l) => {
                let cache = l
                    .cache
                    .take()
                    .ok_or_else(|| ShapeError::Invalid("bn backward before forward".into()))?;
                let (gi, gg, gb) = batchnorm_backward(grad_out, &l.gamma.value, &cache)?;
                l.gamma.accumulate_grad(&gg)?;
                l.beta.accumulate_grad(&gb)?;
                Ok(gi)
            }
            Layer::Relu(l) => {
                let out = l
                    .cached_output
                    .take()
                    .ok_or_else(|| ShapeError::Invalid("relu backward before forward".into()))?;
                relu_backward(grad_out, &out)
            }
            Layer::Sigmoid(l) => {
                let out = l
                    .cached_output
                    .take()
                    .ok_or_else(|| ShapeError::Invalid("sigmoid backward before forward".into()))?;
                sigmoid_backward(grad_out, &out)
            }
            Layer::MaxPool(l) => {
                let (argmax, shape) = l
                    .cache
                    .take()
                    .ok_or_else(|| ShapeError::Invalid("pool backward before forward".into()))?;
                maxpool2_backward(grad_out, &argmax, &shape)
            }
            Layer::Upsample => upsample2_backward(grad_out),
            Layer::Dropout(l) => {
                let mask = l.mask.take();
                dropout_backward(grad_out, mask.as_deref())
            }
        }
    }

    /// Visits every trainable parameter of this layer.
    pub fn for_each_param(&mut self, f: &mut impl FnMut(&mut Parameter<T>)) {
        match self {
            Layer::Conv(l) => {
                f(&mut l.weights);
                f(&mut l.bias);
            }
            Layer::BatchNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            _ => {}
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(l) => l.weights.value.len() + l.bias.value.len(),
            Layer::BatchNorm(l) => l.gamma.value.len() + l.beta.value.len(),
            _ => 0,
        }
    }

    /// Discrete routing decisions taken by the most recent forward pass
    /// (ReLU sign pattern, max-pool argmax). The gradient checker compares
    /// these between perturbed evaluations to detect kink crossings.
    pub fn decision_signature(&self) -> Option<Vec<u32>> {
        match self {
            Layer::Relu(l) => l.cached_output.as_ref().map(|out| {
                out.data()
                    .iter()
                    .map(|&v| (v > T::zero()) as u32)
                    .collect()
            }),
            Layer::MaxPool(l) => l.cache.as_ref().map(|(argmax, _)| argmax.clone()),
            _ => None,
        }
    }

    /// Rewinds the dropout call counter so a forward pass can be replayed
    /// with an identical mask.
    pub fn rewind_dropout(&mut self, calls: u64) {
        if let Layer::Dropout(l) = self {
            l.calls = calls;
        }
    }

    pub fn dropout_calls(&self) -> Option<u64> {
        match self {
            Layer::Dropout(l) => Some(l.calls),
            _ => None,
        }
    }
}
