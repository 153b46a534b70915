//! Quadrature-based generalization error, the transfer-similarity factor,
//! and log-log rate regression.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krr::FittedKrr;
use crate::points::{uniform_grid, Points, Predictor};

pub const DEFAULT_QUADRATURE_POINTS: usize = 1025;

fn check_simpson_count(count: usize) -> Result<()> {
    if count < 3 || count % 2 == 0 {
        return Err(Error::Contract(format!(
            "Simpson's rule needs an odd number of points >= 3, got {count}"
        )));
    }
    Ok(())
}

/// Composite Simpson weights for `count` equally spaced nodes on [a, b].
pub fn simpson_weights(count: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    check_simpson_count(count)?;
    let h = (b - a) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            let w = if i == 0 || i == count - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect())
}

/// Composite Simpson integral of equally spaced samples over [a, b].
pub fn simpson(values: &[f64], a: f64, b: f64) -> Result<f64> {
    let w = simpson_weights(values.len(), a, b)?;
    Ok(w.iter().zip(values).map(|(w, v)| w * v).sum())
}

/// Simpson nodes and weights on [0, 1], reusable across many error evaluations.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Points,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(count: usize) -> Result<Self> {
        let weights = simpson_weights(count, 0.0, 1.0)?;
        let nodes = Points::from_scalars(uniform_grid(count))?;
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &Points {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// ∫ (a − b)² for two functions sampled at the nodes.
    pub fn squared_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (u, v))| w * (u - v) * (u - v))
            .sum::<f64>()
            .max(0.0)
    }

    pub fn l2_error<P, Q>(&self, estimate: &P, truth: &Q) -> Result<L2Error>
    where
        P: Predictor + ?Sized,
        Q: Predictor + ?Sized,
    {
        let a = estimate.predict_batch(&self.nodes)?;
        let b = truth.predict_batch(&self.nodes)?;
        Ok(L2Error::from_squared(self.squared_distance(&a, &b), self.len()))
    }

    /// Values of every model at the nodes, sharing one cross-kernel matrix
    /// when the models were fit on the same points with the same kernel.
    pub fn evaluate_fits(&self, fits: &[FittedKrr]) -> Result<Vec<Vec<f64>>> {
        let shared = fits
            .windows(2)
            .all(|w| w[0].points == w[1].points && w[0].kernel == w[1].kernel);
        match fits.first() {
            Some(first) if shared && !first.points.is_empty() => {
                let cross =
                    crate::kernels::cross_kernel_matrix(&first.kernel, &self.nodes, &first.points);
                Ok(fits
                    .iter()
                    .map(|f| crate::krr::predict_with_cross(&cross, f))
                    .collect())
            }
            _ => fits.iter().map(|f| f.predict_batch(&self.nodes)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Error {
    pub l2: f64,
    pub squared: f64,
    pub grid_points: usize,
}

impl L2Error {
    fn from_squared(squared: f64, grid_points: usize) -> Self {
        Self {
            l2: squared.sqrt(),
            squared,
            grid_points,
        }
    }
}

/// ‖f̂ − f‖ over [0, 1] by composite Simpson on `grid_points` nodes.
pub fn simpson_l2_error<P, Q>(estimate: &P, truth: &Q, grid_points: usize) -> Result<L2Error>
where
    P: Predictor + ?Sized,
    Q: Predictor + ?Sized,
{
    Quadrature::new(grid_points)?.l2_error(estimate, truth)
}

/// ξ = h² / proxy², with the proxy an L2 norm of the source function.
pub fn xi_factor(h: f64, source_norm_proxy: f64) -> Result<f64> {
    if !(source_norm_proxy > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "source norm proxy must be positive, got {source_norm_proxy}"
        )));
    }
    Ok(h * h / (source_norm_proxy * source_norm_proxy))
}

/// Identifies one experimental setting; trials of the same setting share a key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingKey {
    pub method: String,
    /// Target sample size.
    pub n: usize,
    /// Source sample size, 0 for target-only settings.
    pub n_source: usize,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
}

impl Eq for SettingKey {}

impl Ord for SettingKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.method
            .cmp(&other.method)
            .then(self.nu.total_cmp(&other.nu))
            .then(self.nu_offset.total_cmp(&other.nu_offset))
            .then(self.h.total_cmp(&other.h))
            .then(self.n.cmp(&other.n))
            .then(self.n_source.cmp(&other.n_source))
    }
}

impl PartialOrd for SettingKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub setting: SettingKey,
    pub trial: usize,
    pub seed: u64,
    pub error: L2Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator), 0 for one record.
    pub sd: f64,
    pub se: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            se: sd / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub setting: SettingKey,
    pub count: usize,
    pub l2: Moments,
    pub squared: Moments,
}

/// Groups records by setting and summarises each group, in key order.
pub fn aggregate_trials(records: &[ErrorReport]) -> Vec<TrialSummary> {
    let mut groups: BTreeMap<&SettingKey, Vec<&ErrorReport>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.setting).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let l2: Vec<f64> = rs.iter().map(|r| r.error.l2).collect();
            let sq: Vec<f64> = rs.iter().map(|r| r.error.squared).collect();
            TrialSummary {
                setting: key.clone(),
                count: rs.len(),
                l2: Moments::of(&l2),
                squared: Moments::of(&sq),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateAbscissa {
    LogN,
    LogNOverLogN,
}

impl RateAbscissa {
    pub fn transform(&self, n: f64) -> Result<f64> {
        match self {
            RateAbscissa::LogN if n > 0.0 => Ok(n.ln()),
            RateAbscissa::LogNOverLogN if n > 1.0 => Ok((n / n.ln()).ln()),
            _ => Err(Error::InvalidParameter(format!(
                "sample size {n} is outside the domain of the rate abscissa"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub abscissa: RateAbscissa,
    /// (x, log error) pairs the fit was computed from.
    pub points: Vec<(f64, f64)>,
    pub theoretical_slope: Option<f64>,
}

impl RateFit {
    pub fn with_theory(mut self, slope: f64) -> Self {
        self.theoretical_slope = Some(slope);
        self
    }
}

/// The minimax exponent −2α/(2α+d) of the squared error.
pub fn theoretical_slope(alpha: f64, dim: usize) -> f64 {
    -2.0 * alpha / (2.0 * alpha + dim as f64)
}

/// OLS of log error on the transformed sample size.
pub fn fit_rate(pairs: &[(f64, f64)], abscissa: RateAbscissa) -> Result<RateFit> {
    if pairs.len() < 2 {
        return Err(Error::InvalidParameter(
            "a rate fit needs at least two (n, error) pairs".into(),
        ));
    }
    let points = pairs
        .iter()
        .map(|&(n, e)| {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "rate fit needs positive finite errors, got {e}"
                )));
            }
            Ok((abscissa.transform(n)?, e.ln()))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter(
            "rate fit needs at least two distinct sample sizes".into(),
        ));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        abscissa,
        points,
        theoretical_slope: None,
    })
}
