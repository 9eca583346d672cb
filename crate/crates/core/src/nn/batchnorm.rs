//! Batch normalization over the (batch, height, width) axes of B x C x H x W
//! tensors.
//!
//! Channel statistics are accumulated in f64 regardless of the tensor
//! element type; a naive f32 sum over a 64x32x32 slice loses enough
//! precision to visibly de-center the normalized output.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// Per-channel batch statistics cached by the training-mode forward pass.
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Everything the training-mode backward pass needs.
#[derive(Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<f64>,
}

/// Normalizes per channel. In training mode the batch statistics are used
/// and the running statistics are updated in place as
/// `running = (1 - momentum) * running + momentum * batch`; in inference
/// mode only the running statistics are read. Returns the cache needed by
/// [`batchnorm_backward`] in training mode.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    training: bool,
    momentum: f64,
    epsilon: f64,
) -> Result<(Tensor<T>, Option<BnCache<T>>), ShapeError> {
    let (b, c, h, w) = input.dims4()?;
    for (name, t) in [
        ("gamma", &*gamma),
        ("beta", &*beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        if t.len() != c {
            return Err(ShapeError::Dim {
                axis: name,
                expected: c,
                actual: t.len(),
            });
        }
    }
    if epsilon <= 0.0 {
        return Err(ShapeError::Invalid("epsilon must be positive".into()));
    }
    let n = b * h * w;
    if training && n < 2 {
        return Err(ShapeError::Invalid(format!(
            "training-mode batch norm needs at least 2 values per channel, got {n}"
        )));
    }

    let plane = h * w;
    let mut out = Tensor::zeros(input.shape().to_vec());

    if !training {
        let src = input.data();
        let dst = out.data_mut();
        for ci in 0..c {
            let mean = running_mean.data()[ci].to_f64().unwrap();
            let var = running_var.data()[ci].to_f64().unwrap();
            let inv_std = T::from_f64_lossy(1.0 / (var + epsilon).sqrt());
            let g = gamma.data()[ci];
            let bt = beta.data()[ci];
            let m = T::from_f64_lossy(mean);
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for (d, &s) in dst[base..base + plane].iter_mut().zip(&src[base..base + plane]) {
                    *d = g * (s - m) * inv_std + bt;
                }
            }
        }
        return Ok((out, None));
    }

    let src = input.data();
    let mut normalized = Tensor::zeros(input.shape().to_vec());
    let mut inv_stds = vec![0.0f64; c];
    {
        let dst = out.data_mut();
        let norm = normalized.data_mut();
        for ci in 0..c {
            let mut sum = 0.0f64;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for &s in &src[base..base + plane] {
                    sum += s.to_f64().unwrap();
                }
            }
            let mean = sum / n as f64;
            let mut sq = 0.0f64;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for &s in &src[base..base + plane] {
                    let d = s.to_f64().unwrap() - mean;
                    sq += d * d;
                }
            }
            let var = sq / n as f64;
            let inv_std = 1.0 / (var + epsilon).sqrt();
            inv_stds[ci] = inv_std;

            let m = T::from_f64_lossy(mean);
            let is = T::from_f64_lossy(inv_std);
            let g = gamma.data()[ci];
            let bt = beta.data()[ci];
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for i in base..base + plane {
                    let xn = (src[i] - m) * is;
                    norm[i] = xn;
                    dst[i] = g * xn + bt;
                }
            }

            let rm = running_mean.data()[ci].to_f64().unwrap();
            let rv = running_var.data()[ci].to_f64().unwrap();
            running_mean.data_mut()[ci] =
                T::from_f64_lossy((1.0 - momentum) * rm + momentum * mean);
            running_var.data_mut()[ci] = T::from_f64_lossy((1.0 - momentum) * rv + momentum * var);
        }
    }

    Ok((
        out,
        Some(BnCache {
            normalized,
            inv_std: inv_stds,
        }),
    ))
}

/// Training-mode backward pass. Differentiates through the batch statistics:
/// `dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), ShapeError> {
    grad_out.same_shape(&cache.normalized)?;
    let (b, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let n = (b * h * w) as f64;

    let mut grad_input = Tensor::zeros(grad_out.shape().to_vec());
    let mut grad_gamma = Tensor::zeros(vec![c]);
    let mut grad_beta = Tensor::zeros(vec![c]);

    let g_data = grad_out.data();
    let xn = cache.normalized.data();
    let gi = grad_input.data_mut();

    for ci in 0..c {
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                let g = g_data[i].to_f64().unwrap();
                sum_g += g;
                sum_gx += g * xn[i].to_f64().unwrap();
            }
        }
        grad_beta.data_mut()[ci] = T::from_f64_lossy(sum_g);
        grad_gamma.data_mut()[ci] = T::from_f64_lossy(sum_gx);

        let mean_g = T::from_f64_lossy(sum_g / n);
        let mean_gx = T::from_f64_lossy(sum_gx / n);
        let scale = gamma.data()[ci] * T::from_f64_lossy(cache.inv_std[ci]);
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for i in base..base + plane {
                gi[i] = scale * (g_data[i] - mean_g - xn[i] * mean_gx);
            }
        }
    }

    Ok((grad_input, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::full(vec![c], g), Tensor::full(vec![c], b))
    }

    #[test]
    fn training_output_is_standardized() {
        let mut rng = SplitMix64::new(5);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.uniform(-2.0, 5.0)).collect();
        let x = Tensor::new(vec![2, 3, 4, 4], data).unwrap();
        let (gamma, beta) = affine(3, 1.0, 0.0);
        let (mut rm, mut rv) = (Tensor::zeros(vec![3]), Tensor::full(vec![3], 1.0));
        let (y, cache) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
        assert!(cache.is_some());
        let n = 2 * 4 * 4;
        for ci in 0..3 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for bi in 0..2 {
                let base = (bi * 3 + ci) * 16;
                for &v in &y.data()[base..base + 16] {
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n as f64;
            let var = sq / n as f64 - mean * mean;
            assert!(mean.abs() < 1e-6, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "channel {ci} var {var}");
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f64>::full(vec![2, 1, 2, 2], 42.0);
        let (gamma, beta) = affine(1, 1.0, 3.0);
        let (mut rm, mut rv) = (Tensor::zeros(vec![1]), Tensor::full(vec![1], 1.0));
        let (y, _) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
        for &v in y.data() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_uses_running_stats() {
        let x = Tensor::<f64>::full(vec![1, 1, 1, 1], 1.5);
        let (gamma, beta) = affine(1, 2.0, 0.0);
        let (mut rm, mut rv) = (Tensor::zeros(vec![1]), Tensor::full(vec![1], 1.0));
        let eps = 1e-5;
        let (y, cache) =
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, false, 0.1, eps).unwrap();
        assert!(cache.is_none());
        let expected = 2.0 * 1.5 / (1.0 + eps).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert!((y.data()[0] - 3.0 * (1.0 - eps / 2.0)).abs() < 1e-6);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let x = Tensor::new(vec![1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (gamma, beta) = affine(1, 1.0, 0.0);
        let (mut rm, mut rv) = (Tensor::zeros(vec![1]), Tensor::full(vec![1], 1.0));
        batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).unwrap();
        // batch mean 2.5, biased var 1.25
        assert!((rm.data()[0] - 0.25).abs() < 1e-12);
        assert!((rv.data()[0] - (0.9 + 0.125)).abs() < 1e-12);
    }

    #[test]
    fn single_value_training_batch_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 1, 1]);
        let (gamma, beta) = affine(2, 1.0, 0.0);
        let (mut rm, mut rv) = (Tensor::zeros(vec![2]), Tensor::full(vec![2], 1.0));
        assert!(
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, true, 0.1, 1e-5).is_err()
        );
        // the same shape is fine in inference mode
        assert!(
            batchnorm_forward(&x, &gamma, &beta, &mut rm, &mut rv, false, 0.1, 1e-5).is_ok()
        );
    }
}
