//! Inverted dropout: training-time zeroing with survivor scaling, identity
//! at inference.

use crate::rng::{streams, SplitMix64};
use crate::tensor::{Scalar, ShapeError, Tensor};

/// Zeroes each element independently with probability `rate` and scales
/// survivors by `1 / (1 - rate)`. The mask is a pure function of
/// `(rng_seed, call_index)`, so a forward pass can be replayed exactly.
/// Returns the output and the multiplier mask the backward pass applies.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng_seed: u64,
    call_index: u64,
) -> Result<(Tensor<T>, Option<Vec<T>>), ShapeError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ShapeError::Invalid(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mut rng = SplitMix64::from_stream(rng_seed, &[streams::DROPOUT, call_index]);
    let mut mask = Vec::with_capacity(input.len());
    let mut out = Tensor::zeros(input.shape().to_vec());
    for (o, &v) in out.data_mut().iter_mut().zip(input.data()) {
        let m = if rng.next_f64() < rate {
            T::zero()
        } else {
            keep_scale
        };
        mask.push(m);
        *o = v * m;
    }
    Ok((out, Some(mask)))
}

/// Applies the cached multiplier mask to the upstream gradient. A `None`
/// mask means the forward pass was an identity.
pub fn dropout_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    mask: Option<&[T]>,
) -> Result<Tensor<T>, ShapeError> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(ShapeError::Invalid(format!(
                    "dropout mask holds {} entries, upstream has {}",
                    m.len(),
                    grad_out.len()
                )));
            }
            let data = grad_out.data().iter().zip(m).map(|(&g, &s)| g * s).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
    }
}
