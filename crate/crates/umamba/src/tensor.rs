//! Dense row-major tensors over a flat buffer. Rank is dynamic; the ops in
//! this crate use rank 1 for vectors/waveforms, rank 2 for channel-by-time
//! feature maps, rank 3 for conv kernels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_slice(shape: &[usize], data: &[S]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!("expected rank 2, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(Error::shape(format!("expected rank 3, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    /// Row `r` of a rank-2 tensor as a slice.
    pub fn row(&self, r: usize) -> &[S] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        let cols = self.shape[self.shape.len() - 1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "expected a single element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| Scalar::to_f64(*v)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(Scalar::to_f64(*v))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn row_views() {
        let t = Tensor::from_slice(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    }
}
