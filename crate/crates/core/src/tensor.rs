//! Dense n-dimensional arrays, the universal value of the NN engine.
//!
//! Training runs in `f32`; the gradient checker instantiates the same code
//! at `f64`, so tensors and layer ops are generic over [`Scalar`].

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Element types the engine supports (`f32` and `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for hyperparameters and RNG draws.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape {shape:?} implies {expected} elements, data has {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("dimension {axis} mismatch: expected {expected}, got {actual}")]
    Dim {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("shapes {a:?} and {b:?} differ")]
    Mismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major tensor. Canonical image layout is channels x height x
/// width, batched as batch x channels x height x width.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar_like(value: f64, shape: Vec<usize>) -> Self {
        Self::full(shape, T::from_f64_lossy(value))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Interprets the tensor as batch x channels x height x width.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), ShapeError> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(ShapeError::Rank {
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize), ShapeError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(ShapeError::Rank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(ShapeError::DataLength {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Adds a leading batch axis of extent 1.
    pub fn unsqueeze_batch(self) -> Self {
        let mut shape = Vec::with_capacity(self.shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Self {
            shape,
            data: self.data,
        }
    }

    /// Drops a leading batch axis of extent 1.
    pub fn squeeze_batch(mut self) -> Result<Self, ShapeError> {
        if self.shape.first() != Some(&1) {
            return Err(ShapeError::Invalid(format!(
                "cannot squeeze leading axis of shape {:?}",
                self.shape
            )));
        }
        self.shape.remove(0);
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> Result<(), ShapeError> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(ShapeError::Mismatch {
                a: self.shape.clone(),
                b: other.shape.clone(),
            })
        }
    }
}

impl Tensor<f32> {
    /// Raw little-endian f32 bytes, used by the checkpoint and latent formats.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(shape: Vec<usize>, bytes: &[u8]) -> Result<Self, ShapeError> {
        if bytes.len() % 4 != 0 {
            return Err(ShapeError::Invalid(format!(
                "byte length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, ShapeError::DataLength { expected: 6, actual: 5, .. }));
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn round_trip_bytes() {
        let t = Tensor::new(vec![2, 2], vec![1.5f32, -2.25, 0.0, f32::MIN_POSITIVE]).unwrap();
        let bytes = t.to_le_bytes();
        let back = Tensor::from_le_bytes(vec![2, 2], &bytes).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn squeeze_unsqueeze() {
        let t = Tensor::<f32>::zeros(vec![3, 4, 4]);
        let b = t.clone().unsqueeze_batch();
        assert_eq!(b.shape(), &[1, 3, 4, 4]);
        assert_eq!(b.squeeze_batch().unwrap().shape(), &[3, 4, 4]);
    }

    #[test]
    fn cast_preserves_values() {
        let t = Tensor::new(vec![3], vec![0.5f32, -1.0, 2.0]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[0.5, -1.0, 2.0]);
    }
}
