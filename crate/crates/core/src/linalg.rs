//! Thin layer over faer's Cholesky with the jitter ladder used for every
//! kernel system in the crate.

use std::sync::Once;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::Error;

static SEQUENTIAL: Once = Once::new();

/// Pins faer to single-threaded kernels. Work is parallelised at the cell
/// level instead, which keeps every floating-point reduction order
/// independent of the worker count.
pub(crate) fn ensure_sequential() {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Diagonal jitter tiers tried, in order, after a plain factorization fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub tiers: Vec<f64>,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            tiers: vec![1e-12, 1e-10, 1e-8],
        }
    }
}

impl JitterPolicy {
    pub fn max_tier(&self) -> f64 {
        self.tiers.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) struct Factorization {
    pub llt: Llt<f64>,
    /// Jitter added on top of the requested ridge (0 if none was needed).
    pub jitter: f64,
}

impl Factorization {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.llt.solve(&b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }
}

/// Factorizes `matrix + (ridge + jitter)·I`, escalating jitter through the
/// policy tiers. Returns `None` when even the largest tier fails.
pub(crate) fn factor_with_jitter(
    matrix: &Mat<f64>,
    ridge: f64,
    policy: &JitterPolicy,
) -> Option<Factorization> {
    ensure_sequential();
    let n = matrix.nrows();
    let attempt = |shift: f64| -> Option<Llt<f64>> {
        let mut a = matrix.clone();
        for i in 0..n {
            a[(i, i)] += shift;
        }
        a.as_ref().llt(Side::Lower).ok()
    };
    if let Some(llt) = attempt(ridge) {
        return Some(Factorization { llt, jitter: 0.0 });
    }
    for &tier in &policy.tiers {
        if let Some(llt) = attempt(ridge + tier) {
            return Some(Factorization { llt, jitter: tier });
        }
    }
    None
}

pub(crate) fn factorization_error(matrix: &Mat<f64>, ridge: f64) -> Error {
    let n = matrix.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        lo = lo.min(matrix[(i, i)]);
        hi = hi.max(matrix[(i, i)]);
    }
    Error::Factorization {
        n,
        diag_min: lo,
        diag_max: hi,
        ridge,
    }
}

/// Symmetric positive-definite solve with the jitter ladder.
#[cfg(test)]
pub(crate) fn solve_spd(
    matrix: &Mat<f64>,
    ridge: f64,
    rhs: &[f64],
    policy: &JitterPolicy,
) -> crate::error::Result<(Vec<f64>, f64)> {
    let f = factor_with_jitter(matrix, ridge, policy)
        .ok_or_else(|| factorization_error(matrix, ridge))?;
    Ok((f.solve(rhs), f.jitter))
}

pub(crate) fn mat_vec(matrix: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (matrix.nrows(), matrix.ncols());
    debug_assert_eq!(cols, v.len());
    let mut out = vec![0.0; rows];
    // column-major storage: accumulate column by column
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let col = matrix.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * vj;
        }
    }
    out
}
