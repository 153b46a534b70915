//! Gaussian and Matérn kernels and Gram-matrix construction.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use faer::Mat;
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::bessel::bessel_k_scaled;
use crate::error::{Error, Result};
use crate::linalg::{factor_with_jitter, JitterPolicy};
use crate::points::{squared_distance, Points};

/// Default Gaussian bandwidth on the unit interval.
pub const DEFAULT_BANDWIDTH: f64 = 0.2;

/// Fixed-bandwidth Gaussian kernel k(x, y) = exp(−‖x − y‖² / (2ℓ²)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    bandwidth: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Gaussian bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_same_dim(x, y)?;
        Ok(self.from_sq_dist(squared_distance(x, y)))
    }

    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

impl Default for GaussianKernel {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

/// Isotropic Matérn kernel with smoothness ν and range ρ:
/// k(r) = 2^{1−ν}/Γ(ν) · z^ν K_ν(z), z = √(2ν) r / ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    nu: f64,
    range: f64,
}

impl MaternKernel {
    pub fn new(nu: f64, range: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Matérn smoothness must be positive, got {nu}"
            )));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Matérn range must be positive, got {range}"
            )));
        }
        Ok(Self { nu, range })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    /// Sobolev order ν + d/2 of the kernel's RKHS.
    pub fn rkhs_order(&self, dim: usize) -> f64 {
        self.nu + dim as f64 / 2.0
    }

    /// Kernel value at distance `r`. Half-integer orders 1/2, 3/2 and 5/2 use
    /// their closed forms; every other order goes through K_ν.
    pub fn eval_distance(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let z = (2.0 * self.nu).sqrt() * r / self.range;
        match half_integer_order(self.nu) {
            Some(1) => (-z).exp(),
            Some(3) => (1.0 + z) * (-z).exp(),
            Some(5) => (1.0 + z + z * z / 3.0) * (-z).exp(),
            _ => matern_bessel(self.nu, z),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_same_dim(x, y)?;
        Ok(self.eval_distance(squared_distance(x, y).sqrt()))
    }
}

fn half_integer_order(nu: f64) -> Option<u8> {
    [1u8, 3, 5]
        .into_iter()
        .find(|&k| nu == f64::from(k) / 2.0)
}

/// The Matérn correlation through the general Bessel route, at scaled
/// distance z = √(2ν) r / ρ.
pub fn matern_bessel(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    let log_k = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() - z
        + bessel_k_scaled(nu, z).ln();
    let v = log_k.exp();
    if v.is_finite() {
        v.min(1.0)
    } else {
        1.0
    }
}

/// A positive-definite stationary kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian(GaussianKernel),
    Matern(MaternKernel),
}

impl KernelSpec {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_same_dim(x, y)?;
        Ok(self.from_sq_dist(squared_distance(x, y)))
    }

    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        match self {
            KernelSpec::Gaussian(k) => k.from_sq_dist(d2),
            KernelSpec::Matern(k) => k.eval_distance(d2.sqrt()),
        }
    }
}

impl From<GaussianKernel> for KernelSpec {
    fn from(k: GaussianKernel) -> Self {
        KernelSpec::Gaussian(k)
    }
}

impl From<MaternKernel> for KernelSpec {
    fn from(k: MaternKernel) -> Self {
        KernelSpec::Matern(k)
    }
}

fn check_same_dim(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Symmetric matrix of kernel evaluations. Only the lower triangle is
/// computed; the upper one is mirrored from it.
pub(crate) fn kernel_matrix(kernel: &KernelSpec, points: &Points) -> Mat<f64> {
    let n = points.len();
    let mut m = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        let xj = points.row(j);
        m[(j, j)] = kernel.from_sq_dist(0.0);
        for i in (j + 1)..n {
            let v = kernel.from_sq_dist(squared_distance(points.row(i), xj));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `rows.len() × cols.len()` matrix of k(rows_i, cols_j).
pub(crate) fn cross_kernel_matrix(kernel: &KernelSpec, rows: &Points, cols: &Points) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| {
        kernel.from_sq_dist(squared_distance(rows.row(i), cols.row(j)))
    })
}

/// Gram matrix with the jitter that made it numerically positive definite.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: Mat<f64>,
    points: Points,
    jitter: f64,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    /// Diagonal jitter needed for a successful Cholesky factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }
}

/// Builds the Gram matrix and checks it factorizes, escalating jitter.
pub fn gram(kernel: &KernelSpec, points: &Points, policy: &JitterPolicy) -> Result<GramMatrix> {
    if points.is_empty() {
        return Err(Error::EmptyInput("Gram matrix needs at least one point"));
    }
    let matrix = kernel_matrix(kernel, points);
    match factor_with_jitter(&matrix, 0.0, policy) {
        Some(f) => Ok(GramMatrix {
            matrix,
            points: points.clone(),
            jitter: f.jitter,
        }),
        None => Err(Error::NumericalDegeneracy {
            n: points.len(),
            jitter: policy.max_tier(),
            points_hash: multiset_hash(points),
        }),
    }
}

/// Order-independent hash of a point multiset.
pub(crate) fn multiset_hash(points: &Points) -> u64 {
    let mut rows: Vec<Vec<u64>> = points
        .rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort_unstable();
    let mut h = DefaultHasher::new();
    rows.hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussian_examples() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        assert!((k.eval(&[0.0], &[1.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        let k = GaussianKernel::new(0.2).unwrap();
        // exp(-0.16 / 0.08) = exp(-2)
        assert!((k.eval(&[0.3], &[0.7]).unwrap() - 0.1353352832366127).abs() < 1e-14);
    }

    #[test]
    fn gaussian_dimension_mismatch() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(matches!(
            k.eval(&[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GaussianKernel::new(0.0).is_err());
        assert!(GaussianKernel::new(f64::INFINITY).is_err());
        assert!(MaternKernel::new(0.0, 1.0).is_err());
        assert!(MaternKernel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn matern_examples() {
        let k = MaternKernel::new(0.5, 1.0).unwrap();
        assert_eq!(k.eval_distance(0.0), 1.0);
        assert!((k.eval_distance(1.0) - 0.36787944117144233).abs() < 1e-14);
        assert!((matern_bessel(0.5, 1.0) - 0.36787944117144233).abs() < 1e-12);
        let k = MaternKernel::new(1.5, 1.0).unwrap();
        assert!((k.eval_distance(1.0) - 0.4833577245965077).abs() < 1e-14);
        let z = 3f64.sqrt();
        assert!((matern_bessel(1.5, z) - 0.4833577245965077).abs() < 1e-12);
    }

    #[test]
    fn matern_bessel_matches_closed_forms() {
        let closed: [(f64, fn(f64) -> f64); 3] = [
            (0.5, |z| (-z).exp()),
            (1.5, |z| (1.0 + z) * (-z).exp()),
            (2.5, |z| (1.0 + z + z * z / 3.0) * (-z).exp()),
        ];
        for (nu, f) in closed {
            let mut r = 1e-6f64;
            while r <= 10.0 {
                let z = (2.0 * nu).sqrt() * r;
                assert!((matern_bessel(nu, z) - f(z)).abs() < 1e-8, "nu={nu} r={r}");
                r *= 1.07;
            }
        }
    }

    #[test]
    fn matern_fractional_is_between_neighbours() {
        // Matérn correlation at a fixed range increases with ν at short distance.
        let r = 0.1;
        let a = MaternKernel::new(1.5, 1.0).unwrap().eval_distance(r);
        let b = MaternKernel::new(2.01, 1.0).unwrap().eval_distance(r);
        let c = MaternKernel::new(2.5, 1.0).unwrap().eval_distance(r);
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn gram_examples() {
        let k: KernelSpec = GaussianKernel::new(1.0).unwrap().into();
        let p = Points::from_scalars(vec![0.0]).unwrap();
        let g = gram(&k, &p, &JitterPolicy::default()).unwrap();
        assert_eq!(g.to_rows(), vec![vec![1.0]]);
        let p = Points::from_scalars(vec![0.0, 1.0]).unwrap();
        let g = gram(&k, &p, &JitterPolicy::default()).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(g.to_rows(), vec![vec![1.0, e], vec![e, 1.0]]);
        assert_eq!(g.jitter(), 0.0);
    }

    #[test]
    fn matern_gram_on_grid_needs_little_jitter() {
        let k: KernelSpec = MaternKernel::new(2.01, 1.0).unwrap().into();
        let g = gram(&k, &Points::unit_grid(50), &JitterPolicy::default()).unwrap();
        assert!(g.jitter() <= 1e-10, "jitter {}", g.jitter());
    }

    #[test]
    fn degenerate_gram_reports_hash() {
        let k: KernelSpec = GaussianKernel::new(1.0).unwrap().into();
        let p = Points::from_scalars(vec![0.0; 3]).unwrap();
        let policy = JitterPolicy { tiers: vec![] };
        match gram(&k, &p, &policy) {
            Err(Error::NumericalDegeneracy { points_hash, .. }) => {
                assert_eq!(points_hash, multiset_hash(&p))
            }
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn gaussian_symmetric_bounded(x in -3.0f64..3.0, y in -3.0f64..3.0, l in 0.05f64..2.0) {
            let k = GaussianKernel::new(l).unwrap();
            let a = k.eval(&[x], &[y]).unwrap();
            let b = k.eval(&[y], &[x]).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            if (x - y).powi(2) / (2.0 * l * l) < 700.0 { prop_assert!(a > 0.0); }
            if (x - y).abs() > 1e-6 { prop_assert!(a < 1.0); }
        }

        #[test]
        fn gaussian_decreasing_in_distance(d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, l in 0.1f64..1.0) {
            prop_assume!((d1 - d2).abs() > 1e-6);
            let k = GaussianKernel::new(l).unwrap();
            let (a, b) = (k.eval(&[0.0], &[d1]).unwrap(), k.eval(&[0.0], &[d2]).unwrap());
            prop_assert_eq!(d1 < d2, a > b);
        }

        #[test]
        fn matern_in_unit_interval(nu in 0.3f64..4.5, r in 0.0f64..5.0, rho in 0.1f64..2.0) {
            let v = MaternKernel::new(nu, rho).unwrap().eval_distance(r);
            prop_assert!(v > 0.0 && v <= 1.0, "v = {}", v);
        }

        #[test]
        fn gram_symmetric_and_factorizable(
            xs in proptest::collection::btree_set(0u32..100_000, 1..200),
            nu in prop_oneof![Just(0.5), Just(1.01), Just(2.01), Just(3.01)],
            gaussian in any::<bool>(),
        ) {
            let pts = Points::from_scalars(xs.iter().map(|&v| v as f64 / 100_000.0).collect()).unwrap();
            let kernel: KernelSpec = if gaussian {
                GaussianKernel::new(0.2).unwrap().into()
            } else {
                MaternKernel::new(nu, 0.5).unwrap().into()
            };
            let g = gram(&kernel, &pts, &JitterPolicy::default()).unwrap();
            for i in 0..g.n() {
                for j in 0..g.n() {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
        }
    }
}
