//! Row-major point storage and the prediction interface shared by every
//! estimator and ground-truth function in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of `len()` points in `dim` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("point dimension must be >= 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("points must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: Vec<f64>) -> Result<Self> {
        Self::new(1, xs)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Points at the given row indices, in order.
    pub fn select(&self, idx: impl IntoIterator<Item = usize>) -> Points {
        let mut data = Vec::new();
        for i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            data,
        }
    }

    /// Uniform grid of `count` points on [0, 1] (d = 1).
    pub fn unit_grid(count: usize) -> Points {
        let data = uniform_grid(count);
        Points { dim: 1, data }
    }
}

pub(crate) fn uniform_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let step = 1.0 / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { 1.0 } else { i as f64 * step })
                .collect()
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Anything that maps points of a fixed dimension to real values.
pub trait Predictor {
    fn dim(&self) -> usize;

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>>;

    fn predict_one(&self, x: &[f64]) -> Result<f64> {
        let p = Points::new(self.dim(), x.to_vec())?;
        if p.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.predict_batch(&p)?[0])
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        (**self).predict_batch(points)
    }
}

/// Wraps a scalar closure as a one-dimensional predictor.
pub struct FnPredictor<F>(pub F);

impl<F: Fn(f64) -> f64> Predictor for FnPredictor<F> {
    fn dim(&self) -> usize {
        1
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(1, points)?;
        Ok(points.as_slice().iter().map(|&x| (self.0)(x)).collect())
    }
}

pub(crate) fn check_dim(expected: usize, points: &Points) -> Result<()> {
    if points.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: points.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_exact() {
        let g = uniform_grid(1025);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1024], 1.0);
        assert_eq!(g[512], 0.5);
    }

    #[test]
    fn rejects_ragged_data() {
        assert!(Points::new(2, vec![0.0, 1.0, 2.0]).is_err());
        assert!(Points::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn select_keeps_rows() {
        let p = Points::new(2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = p.select([2, 0]);
        assert_eq!(s.as_slice(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
