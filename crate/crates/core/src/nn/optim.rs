//! Trainable parameters and the Adam optimizer.

use crate::tensor::{Scalar, ShapeError, Tensor};

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(shape.clone()),
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    /// Adds `delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &Tensor<T>) -> Result<(), ShapeError> {
        self.grad.same_shape(delta)?;
        for (g, &d) in self.grad.data_mut().iter_mut().zip(delta.data()) {
            *g = *g + d;
        }
        Ok(())
    }
}

/// Adam hyperparameters. Defaults are the usual lr 1e-3, beta1 0.9,
/// beta2 0.999, epsilon 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.lr <= 0.0 {
            return Err(ShapeError::Invalid("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ShapeError::Invalid("betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(ShapeError::Invalid("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the parameter's accumulated gradient.
pub fn adam_step<T: Scalar>(param: &mut Parameter<T>, hp: &AdamParams) {
    param.step_count += 1;
    let t = param.step_count as i32;
    let b1 = T::from_f64_lossy(hp.beta1);
    let b2 = T::from_f64_lossy(hp.beta2);
    let one = T::one();
    let bc1 = T::from_f64_lossy(1.0 - hp.beta1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - hp.beta2.powi(t));
    let lr = T::from_f64_lossy(hp.lr);
    let eps = T::from_f64_lossy(hp.epsilon);

    let g_data = param.grad.data();
    let m_data = param.adam_m.data_mut();
    let v_data = param.adam_v.data_mut();
    let value = param.value.data_mut();
    for i in 0..value.len() {
        let g = g_data[i];
        let m = b1 * m_data[i] + (one - b1) * g;
        let v = b2 * v_data[i] + (one - b2) * g * g;
        m_data[i] = m;
        v_data[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        value[i] = value[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_fresh_state_is_noop() {
        let mut p = Parameter::new(Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        adam_step(&mut p, &AdamParams::default());
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        for g in [0.5f64, -0.25, 3.0] {
            let mut p = Parameter::new(Tensor::new(vec![1], vec![0.0f64]).unwrap());
            p.grad.data_mut()[0] = g;
            let hp = AdamParams::with_lr(0.01);
            adam_step(&mut p, &hp);
            let update = -p.value.data()[0];
            assert!(
                (update - hp.lr * g.signum()).abs() < 1e-6 * hp.lr,
                "g={g} update={update}"
            );
        }
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        // hand-rolled scalar Adam, constant gradient 1, lr 0.1
        let (b1, b2, eps, lr) = (0.9f64, 0.999, 1e-8, 0.1);
        let mut theta = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Parameter::new(Tensor::new(vec![1], vec![0.0f64]).unwrap());
        let hp = AdamParams::with_lr(0.1);
        for _ in 0..2 {
            p.grad.data_mut()[0] = 1.0;
            adam_step(&mut p, &hp);
        }
        assert!((p.value.data()[0] - theta).abs() < 1e-12);
        assert_eq!(p.step_count, 2);
    }

    #[test]
    fn moments_share_parameter_shape() {
        let p = Parameter::new(Tensor::<f32>::zeros(vec![4, 3, 3, 3]));
        assert_eq!(p.grad.shape(), p.value.shape());
        assert_eq!(p.adam_m.shape(), p.value.shape());
        assert_eq!(p.adam_v.shape(), p.value.shape());
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(AdamParams::default().validate().is_ok());
        assert!(AdamParams::with_lr(0.0).validate().is_err());
        let bad = AdamParams {
            beta1: 1.0,
            ..AdamParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
