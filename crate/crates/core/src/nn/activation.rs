//! Elementwise activations.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// Elementwise max(0, x).
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Routes the upstream gradient through positive inputs only; the
/// subgradient at exactly zero is zero. `output` is the forward result,
/// whose sign pattern matches the input's.
pub fn relu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    output: &Tensor<T>,
) -> Result<Tensor<T>, ShapeError> {
    grad_out.same_shape(output)?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// Numerically stable logistic function; output strictly in (0, 1).
/// Deep saturation is pinned to the nearest representable value inside the
/// open interval instead of rounding to exactly 0 or 1.
pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let hi = T::one() - T::epsilon();
    let lo = T::min_positive_value();
    input.map(|v| {
        let s = if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        };
        s.min(hi).max(lo)
    })
}

/// grad = upstream * y * (1 - y), with `output` the cached forward result.
pub fn sigmoid_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    output: &Tensor<T>,
) -> Result<Tensor<T>, ShapeError> {
    grad_out.same_shape(output)?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| g * y * (T::one() - y))
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![3], vec![-1.0f64, 0.0, 3.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let x = Tensor::new(vec![4], vec![0.5f64, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), x.data());
    }

    #[test]
    fn relu_gradient_mask() {
        let x = Tensor::new(vec![2], vec![2.0f64, -2.0]).unwrap();
        let y = relu_forward(&x);
        let g = Tensor::new(vec![2], vec![5.0f64, 5.0]).unwrap();
        assert_eq!(relu_backward(&g, &y).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let x = Tensor::new(vec![3], vec![0.0f64, 100.0, -100.0]).unwrap();
        let y = sigmoid_forward(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] < 1.0, "output must stay strictly below 1");
        assert!(y.data()[2] > 0.0 && y.data()[2] < 1e-12);
        assert!(y.all_finite());
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let x = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let y = sigmoid_forward(&x);
        let g = Tensor::new(vec![1], vec![1.0f64]).unwrap();
        let gx = sigmoid_backward(&g, &y).unwrap();
        assert!((gx.data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_range_is_open_interval() {
        let x = Tensor::new(
            vec![7],
            vec![-500.0f64, -30.0, -1.0, 0.0, 1.0, 30.0, 500.0],
        )
        .unwrap();
        for &y in sigmoid_forward(&x).data() {
            assert!(y > 0.0 && y < 1.0);
        }
    }
}
