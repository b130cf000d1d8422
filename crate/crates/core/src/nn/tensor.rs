use alloc::vec;
use alloc::vec::Vec;

use super::{NnError, Real};

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::BadLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::ZERO; n],
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, NnError> {
        Self::new(shape, data.iter().map(|&v| F::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NnError::BadLength {
                len: self.data.len(),
                shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a 2-d tensor.
    pub fn row(&self, i: usize) -> &[F] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
