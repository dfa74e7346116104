//! Minimal row-major tensor used to carry samples and predictions.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!("extents must be positive, got {shape:?}")));
        }
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {count} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    /// Builds an `rows x cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let count = shape.iter().product();
        Self::new(shape, vec![0.0; count])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Leading extent (sample count).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of the trailing extents (feature count per sample).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Stacks two matrices with equal column counts.
    pub fn vstack(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.cols() {
            return Err(Error::shape(format!(
                "cannot stack {} and {} columns",
                self.cols(),
                other.cols()
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Tensor::matrix(self.rows() + other.rows(), self.cols(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_count_must_match_extents() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![0, 3], vec![]), Err(Error::Shape(_))));
    }

    #[test]
    fn rows_and_stacking() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0]]).unwrap();
        let c = a.vstack(&b).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.row(2), &[5.0, 6.0]);
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
