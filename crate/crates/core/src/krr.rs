//! Closed-form kernel ridge regression and regularization schedules.
//!
//! The estimator minimises (1/n) Σ (y_i − f(x_i))² + λ‖f‖², whose dual
//! coefficients solve (G + nλI) α = y. The 1/n on the loss is why the ridge
//! enters as nλ.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{cross_kernel_matrix, kernel_matrix, KernelSpec};
use crate::linalg::{factor_with_jitter, factorization_error, mat_vec, JitterPolicy};
use crate::points::{check_dim, squared_distance, Points, Predictor};

/// Largest exponent magnitude evaluated before λ is clamped.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// λ = exp(−C·n^{2/(2α+d)}) for the fixed-bandwidth Gaussian kernel.
    GaussianExponential,
    /// λ = C·n^{−2α′/(2α+d)}, α′ the imposed kernel's Sobolev order.
    MaternPolynomial { imposed_order: f64 },
    /// λ = C.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSchedule {
    pub kind: ScheduleKind,
    pub constant: f64,
    /// Smoothness α of the target function the schedule is tuned for.
    pub smoothness: f64,
    pub dim: usize,
}

impl RegSchedule {
    pub fn gaussian(constant: f64, smoothness: f64, dim: usize) -> Self {
        Self {
            kind: ScheduleKind::GaussianExponential,
            constant,
            smoothness,
            dim,
        }
    }

    pub fn matern(constant: f64, true_order: f64, imposed_order: f64, dim: usize) -> Self {
        Self {
            kind: ScheduleKind::MaternPolynomial { imposed_order },
            constant,
            smoothness: true_order,
            dim,
        }
    }

    pub fn fixed(lambda: f64) -> Self {
        Self {
            kind: ScheduleKind::Fixed,
            constant: lambda,
            smoothness: 1.0,
            dim: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "schedule constant must be positive, got {}",
                self.constant
            )));
        }
        if !(self.smoothness > 0.0) || self.dim == 0 {
            return Err(Error::InvalidParameter(
                "schedule smoothness and dimension must be positive".into(),
            ));
        }
        if let ScheduleKind::MaternPolynomial { imposed_order } = self.kind {
            if !(imposed_order > 0.0) {
                return Err(Error::InvalidParameter("imposed order must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A scheduled λ and whether it was clamped to avoid underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda {
    pub value: f64,
    pub underflow: bool,
}

pub fn schedule_lambda(s: &RegSchedule, n: usize) -> Result<Lambda> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be >= 1".into()));
    }
    s.validate()?;
    let nf = n as f64;
    let d = s.dim as f64;
    let exponent = match s.kind {
        ScheduleKind::Fixed => {
            return Ok(Lambda {
                value: s.constant,
                underflow: false,
            })
        }
        ScheduleKind::GaussianExponential => -s.constant * nf.powf(2.0 / (2.0 * s.smoothness + d)),
        ScheduleKind::MaternPolynomial { imposed_order } => {
            s.constant.ln() - 2.0 * imposed_order / (2.0 * s.smoothness + d) * nf.ln()
        }
    };
    if exponent < -MAX_EXPONENT {
        return Ok(Lambda {
            value: f64::MIN_POSITIVE,
            underflow: true,
        });
    }
    Ok(Lambda {
        value: exponent.exp(),
        underflow: false,
    })
}

/// A fitted KRR predictor f̂(x) = Σ α_i k(x, x_i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedKrr {
    pub kernel: KernelSpec,
    pub points: Points,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Diagonal jitter added on top of nλ to make the system factorable.
    pub jitter: f64,
}

impl FittedKrr {
    /// The identically-zero predictor.
    pub fn zero(kernel: KernelSpec, dim: usize) -> Self {
        Self {
            kernel,
            points: Points::empty(dim),
            coefficients: Vec::new(),
            lambda: 0.0,
            jitter: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.coefficients.len()
    }

    /// αᵀGα, the squared RKHS norm of the fit.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let g = kernel_matrix(&self.kernel, &self.points);
        let ga = mat_vec(&g, &self.coefficients);
        ga.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.points.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.points.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .points
            .rows()
            .zip(&self.coefficients)
            .map(|(xi, a)| a * self.kernel.from_sq_dist(squared_distance(x, xi)))
            .sum())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Predictor for FittedKrr {
    fn dim(&self) -> usize {
        self.points.dim()
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(self.points.dim(), points)?;
        points.rows().map(|x| self.predict(x)).collect()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("λ must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Training Gram matrix held once and reused for several λ values.
pub struct KrrSystem {
    kernel: KernelSpec,
    points: Points,
    y: Vec<f64>,
    gram: Mat<f64>,
    policy: JitterPolicy,
}

impl KrrSystem {
    pub fn new(kernel: KernelSpec, data: &Dataset) -> Result<Self> {
        Self::from_parts(kernel, data.x.clone(), data.y.clone())
    }

    pub(crate) fn from_parts(kernel: KernelSpec, points: Points, y: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("KRR needs at least one training point"));
        }
        if points.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: y.len(),
            });
        }
        let gram = kernel_matrix(&kernel, &points);
        Ok(Self {
            kernel,
            points,
            y,
            gram,
            policy: JitterPolicy::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn fit(&self, lambda: f64) -> Result<FittedKrr> {
        check_lambda(lambda)?;
        let ridge = self.n() as f64 * lambda;
        let f = factor_with_jitter(&self.gram, ridge, &self.policy)
            .ok_or_else(|| factorization_error(&self.gram, ridge))?;
        Ok(FittedKrr {
            kernel: self.kernel,
            points: self.points.clone(),
            coefficients: f.solve(&self.y),
            lambda,
            jitter: f.jitter,
        })
    }

    /// Cross-kernel matrix between `query` and the training points, for
    /// evaluating many fits at the same query set.
    pub(crate) fn cross(&self, query: &Points) -> Mat<f64> {
        cross_kernel_matrix(&self.kernel, query, &self.points)
    }
}

/// Fits KRR on `data` with regularization λ (λ = 0 allowed when the Gram
/// matrix is nonsingular).
pub fn fit(kernel: &KernelSpec, data: &Dataset, lambda: f64) -> Result<FittedKrr> {
    check_lambda(lambda)?;
    KrrSystem::new(*kernel, data)?.fit(lambda)
}

/// Predictions of `model` at query points whose cross-kernel matrix is known.
pub(crate) fn predict_with_cross(cross: &Mat<f64>, model: &FittedKrr) -> Vec<f64> {
    mat_vec(cross, &model.coefficients)
}
