//! Mean squared error loss.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// `loss = mean((prediction - target)^2)` over all elements, together with
/// the gradient `2/D * (prediction - target)` with respect to the
/// prediction. The loss itself is accumulated in f64.
pub fn mse_loss<T: Scalar>(
    prediction: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(f64, Tensor<T>), ShapeError> {
    prediction.same_shape(target)?;
    let d = prediction.len();
    if d == 0 {
        return Err(ShapeError::Invalid("mse on empty tensors".into()));
    }
    let scale = T::from_f64_lossy(2.0 / d as f64);
    let mut sum = 0.0f64;
    let mut grad = Tensor::zeros(prediction.shape().to_vec());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data())
        .zip(target.data())
    {
        let diff = p - t;
        let df = diff.to_f64().unwrap();
        sum += df * df;
        *g = diff * scale;
    }
    Ok((sum / d as f64, grad))
}
