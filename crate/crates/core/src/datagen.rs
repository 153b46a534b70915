//! Ground-truth functions drawn as Matérn Gaussian-process sample paths, and
//! the regression datasets built from them.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, multiset_hash, KernelSpec, MaternKernel};
use crate::linalg::{factor_with_jitter, JitterPolicy};
use crate::points::{check_dim, uniform_grid, Points, Predictor};
use crate::seeds::{derive_seed, rng_for, tag};

/// Grid on which sample paths are materialised.
pub const DEFAULT_GRID_SIZE: usize = 2048;
/// Range parameter ρ of the generating Matérn kernels.
pub const DEFAULT_GP_RANGE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    NaturalCubicSpline,
}

/// A function known through its values on a sorted grid of [0, 1] and
/// evaluated elsewhere by natural cubic-spline interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampledFunctionRepr")]
pub struct SampledFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
    #[serde(skip)]
    second_derivs: Vec<f64>,
    pub interpolation: Interpolation,
    pub seed: u64,
    pub generator: Option<MaternKernel>,
    /// Jitter that was needed to factor the generating covariance.
    pub jitter: f64,
}

impl SampledFunction {
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "sampled function needs >= 2 grid points and matching values (got {} and {})",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
        }
        if values.iter().chain(&grid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("grid and values must be finite".into()));
        }
        let second_derivs = natural_spline_second_derivs(&grid, &values);
        Ok(Self {
            grid,
            values,
            second_derivs,
            interpolation: Interpolation::NaturalCubicSpline,
            seed: 0,
            generator: None,
            jitter: 0.0,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same grid, values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> SampledFunction {
        let values: Vec<f64> = self.values.iter().map(|v| v * factor).collect();
        let second_derivs = self.second_derivs.iter().map(|v| v * factor).collect();
        SampledFunction {
            grid: self.grid.clone(),
            values,
            second_derivs,
            ..self.clone()
        }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(Error::Extrapolation { x, lo, hi });
        }
        // interval index k with grid[k] <= x <= grid[k+1]
        let k = match self.grid.binary_search_by(|g| g.total_cmp(&x)) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i - 1,
        };
        let (x0, x1) = (self.grid[k], self.grid[k + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - x) / h, (x - x0) / h);
        let (m0, m1) = (self.second_derivs[k], self.second_derivs[k + 1]);
        Ok(a * self.values[k]
            + b * self.values[k + 1]
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0)
    }

    /// L2 norm on [grid₀, grid_last] by the trapezoidal rule on the grid.
    pub fn grid_l2_norm(&self) -> f64 {
        grid_l2_norm(&self.grid, &self.values)
    }
}

#[derive(Deserialize)]
struct SampledFunctionRepr {
    grid: Vec<f64>,
    values: Vec<f64>,
    interpolation: Interpolation,
    seed: u64,
    generator: Option<MaternKernel>,
    jitter: f64,
}

impl TryFrom<SampledFunctionRepr> for SampledFunction {
    type Error = Error;

    fn try_from(r: SampledFunctionRepr) -> Result<Self> {
        let mut f = SampledFunction::from_values(r.grid, r.values)?;
        f.interpolation = r.interpolation;
        f.seed = r.seed;
        f.generator = r.generator;
        f.jitter = r.jitter;
        Ok(f)
    }
}

impl Predictor for SampledFunction {
    fn dim(&self) -> usize {
        1
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(1, points)?;
        points.as_slice().iter().map(|&x| self.evaluate(x)).collect()
    }
}

/// Trapezoidal L2 norm of grid values.
pub fn grid_l2_norm(grid: &[f64], values: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..grid.len() {
        s += 0.5 * (grid[i] - grid[i - 1]) * (values[i] * values[i] + values[i - 1] * values[i - 1]);
    }
    s.sqrt()
}

fn natural_spline_second_derivs(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

struct PathFactor {
    /// Packed lower-triangular Cholesky factor, row-major.
    lower: Vec<f64>,
    jitter: f64,
}

type FactorCell = Arc<OnceLock<std::result::Result<Arc<PathFactor>, (f64, u64)>>>;

fn factor_cache() -> &'static Mutex<HashMap<(u64, u64, usize), FactorCell>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, usize), FactorCell>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn path_factor(kernel: &MaternKernel, grid_size: usize) -> Result<Arc<PathFactor>> {
    let key = (kernel.nu().to_bits(), kernel.range().to_bits(), grid_size);
    let cell = {
        let mut map = factor_cache().lock().expect("factor cache poisoned");
        map.entry(key).or_default().clone()
    };
    let policy = JitterPolicy::default();
    let result = cell.get_or_init(|| {
        let points = Points::unit_grid(grid_size);
        let matrix = kernel_matrix(&KernelSpec::Matern(*kernel), &points);
        match factor_with_jitter(&matrix, 0.0, &policy) {
            Some(f) => {
                let l = f.llt.L();
                let mut lower = Vec::with_capacity(grid_size * (grid_size + 1) / 2);
                for i in 0..grid_size {
                    for j in 0..=i {
                        lower.push(l[(i, j)]);
                    }
                }
                Ok(Arc::new(PathFactor {
                    lower,
                    jitter: f.jitter,
                }))
            }
            None => Err((policy.max_tier(), multiset_hash(&points))),
        }
    });
    match result {
        Ok(f) => Ok(f.clone()),
        Err((jitter, hash)) => Err(Error::NumericalDegeneracy {
            n: grid_size,
            jitter: *jitter,
            points_hash: *hash,
        }),
    }
}

/// Draws a zero-mean GP path with Matérn covariance on a uniform grid of
/// [0, 1]. The covariance factor is cached per (ν, ρ, grid size).
pub fn sample_gp(kernel: &MaternKernel, grid_size: usize, seed: u64) -> Result<SampledFunction> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter("grid_size must be >= 2".into()));
    }
    let factor = path_factor(kernel, grid_size)?;
    let mut rng = rng_for(derive_seed(seed, &[tag::GP_PATH]));
    let z: Vec<f64> = (0..grid_size).map(|_| rng.sample(StandardNormal)).collect();
    let mut values = Vec::with_capacity(grid_size);
    let mut offset = 0;
    for i in 0..grid_size {
        let row = &factor.lower[offset..offset + i + 1];
        values.push(row.iter().zip(&z).map(|(l, zj)| l * zj).sum());
        offset += i + 1;
    }
    let mut f = SampledFunction::from_values(uniform_grid(grid_size), values)?;
    f.seed = seed;
    f.generator = Some(*kernel);
    f.jitter = factor.jitter;
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Target,
    Source,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Target => "target",
            Domain::Source => "source",
        }
    }
}

/// Paired covariates and responses from one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Points,
    pub y: Vec<f64>,
    pub domain: Domain,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn new(x: Points, y: Vec<f64>, domain: Domain) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one observation"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("responses must be finite".into()));
        }
        Ok(Self {
            x,
            y,
            domain,
            noise_sd: 0.0,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// Rows at `idx`, keeping domain and provenance.
    pub fn subset(&self, idx: impl IntoIterator<Item = usize> + Clone) -> Dataset {
        Dataset {
            x: self.x.select(idx.clone()),
            y: idx.into_iter().map(|i| self.y[i]).collect(),
            domain: self.domain,
            noise_sd: self.noise_sd,
            seed: self.seed,
        }
    }

    /// Same covariates with replaced responses.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Dataset> {
        let mut d = Dataset::new(self.x.clone(), y, self.domain)?;
        d.noise_sd = self.noise_sd;
        d.seed = self.seed;
        Ok(d)
    }

    /// CSV with columns x0..x{d-1}, y, domain.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},y,domain", header.join(","))?;
        for (row, y) in self.x.rows().zip(&self.y) {
            let xs: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{}", xs.join(","), y, self.domain.as_str())?;
        }
        Ok(())
    }
}

/// Draws `n` covariates uniformly on [0,1]^d and responses f(x) + σε.
/// Covariates and noise use separate derived streams.
pub fn make_dataset<F: Predictor + ?Sized>(
    f: &F,
    n: usize,
    noise_sd: f64,
    seed: u64,
    domain: Domain,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyInput("dataset size must be >= 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let dim = f.dim();
    let mut cov_rng = rng_for(derive_seed(seed, &[tag::COVARIATES]));
    let xs: Vec<f64> = (0..n * dim).map(|_| cov_rng.random::<f64>()).collect();
    let x = Points::new(dim, xs)?;
    let mut noise_rng = rng_for(derive_seed(seed, &[tag::NOISE]));
    let clean = f.predict_batch(&x)?;
    let y = clean
        .into_iter()
        .map(|v| {
            let e: f64 = noise_rng.sample(StandardNormal);
            if noise_sd == 0.0 {
                v
            } else {
                v + noise_sd * e
            }
        })
        .collect();
    let mut d = Dataset::new(x, y, domain)?;
    d.noise_sd = noise_sd;
    d.seed = seed;
    Ok(d)
}

/// Target function plus a rescaled offset; the source is f_T + offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferScenario {
    pub target: SampledFunction,
    /// Offset already normalised to unit grid L2 norm and scaled by h.
    pub offset: SampledFunction,
    pub offset_scale: f64,
    pub offset_raw_norm: f64,
    pub nu_target: f64,
    pub nu_offset: f64,
}

impl TransferScenario {
    pub fn source(&self) -> SourceFunction<'_> {
        SourceFunction { scenario: self }
    }
}

/// f_S = f_T + h·f_δ/‖f_δ‖ evaluated pointwise.
pub struct SourceFunction<'a> {
    scenario: &'a TransferScenario,
}

impl SourceFunction<'_> {
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        Ok(self.scenario.target.evaluate(x)? + self.scenario.offset.evaluate(x)?)
    }
}

impl Predictor for SourceFunction<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(1, points)?;
        points.as_slice().iter().map(|&x| self.evaluate(x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    pub target: u64,
    pub offset: u64,
}

pub fn make_transfer_scenario(
    nu_target: f64,
    nu_offset: f64,
    offset_scale: f64,
    range: f64,
    grid_size: usize,
    seeds: ScenarioSeeds,
) -> Result<TransferScenario> {
    if !(offset_scale >= 0.0 && offset_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "offset scale h must be >= 0, got {offset_scale}"
        )));
    }
    let target = sample_gp(&MaternKernel::new(nu_target, range)?, grid_size, seeds.target)?;
    let raw = sample_gp(&MaternKernel::new(nu_offset, range)?, grid_size, seeds.offset)?;
    let norm = raw.grid_l2_norm();
    let factor = if norm > 0.0 { offset_scale / norm } else { 0.0 };
    Ok(TransferScenario {
        target,
        offset: raw.scaled(factor),
        offset_scale,
        offset_raw_norm: norm,
        nu_target,
        nu_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::FnPredictor;

    #[test]
    fn spline_exact_at_nodes_and_constants() {
        let grid = uniform_grid(11);
        let vals: Vec<f64> = grid.iter().map(|x| (7.0 * x).sin()).collect();
        let f = SampledFunction::from_values(grid.clone(), vals.clone()).unwrap();
        for (g, v) in grid.iter().zip(&vals) {
            assert_eq!(f.evaluate(*g).unwrap(), *v);
        }
        let c = SampledFunction::from_values(grid, vec![2.5; 11]).unwrap();
        for x in [0.0, 0.013, 0.5, 0.77, 1.0] {
            assert!((c.evaluate(x).unwrap() - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn spline_linear_ramp_midpoint() {
        let grid = uniform_grid(33);
        let vals: Vec<f64> = grid.iter().map(|x| 3.0 * x - 1.0).collect();
        let f = SampledFunction::from_values(grid.clone(), vals.clone()).unwrap();
        for k in 0..32 {
            let mid = 0.5 * (grid[k] + grid[k + 1]);
            let want = 0.5 * (vals[k] + vals[k + 1]);
            assert!((f.evaluate(mid).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_rejects_extrapolation() {
        let f = SampledFunction::from_values(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(matches!(f.evaluate(1.5), Err(Error::Extrapolation { .. })));
        assert!(matches!(f.evaluate(-1e-9), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn sample_gp_deterministic() {
        let k = MaternKernel::new(2.01, DEFAULT_GP_RANGE).unwrap();
        let a = sample_gp(&k, 256, 7).unwrap();
        let b = sample_gp(&k, 256, 7).unwrap();
        let c = sample_gp(&k, 256, 8).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn sample_gp_covers_default_grid_for_experiment_orders() {
        for nu in [1.01, 2.01, 3.01, 4.01] {
            let k = MaternKernel::new(nu, DEFAULT_GP_RANGE).unwrap();
            let f = sample_gp(&k, DEFAULT_GRID_SIZE, 1).unwrap();
            assert!(f.values().iter().all(|v| v.is_finite()));
            assert!(f.jitter <= 1e-8);
        }
    }

    #[test]
    fn noiseless_dataset_is_exact() {
        let f = FnPredictor(|x: f64| x * x);
        let d = make_dataset(&f, 40, 0.0, 3, Domain::Target).unwrap();
        for (x, y) in d.x.as_slice().iter().zip(&d.y) {
            assert_eq!(*y, x * x);
        }
        let one = make_dataset(&f, 1, 0.5, 3, Domain::Source).unwrap();
        assert_eq!(one.len(), 1);
        assert!(make_dataset(&f, 0, 0.5, 3, Domain::Source).is_err());
        assert!(make_dataset(&f, 3, -0.5, 3, Domain::Source).is_err());
    }

    #[test]
    fn noise_prefix_independent_of_n() {
        let zero = FnPredictor(|_x: f64| 0.0);
        let a = make_dataset(&zero, 10, 1.0, 11, Domain::Target).unwrap();
        let b = make_dataset(&zero, 25, 1.0, 11, Domain::Target).unwrap();
        assert_eq!(&a.y[..], &b.y[..10]);
        assert_eq!(a.x.as_slice(), &b.x.as_slice()[..10]);
    }

    #[test]
    fn scenario_scaling() {
        let seeds = ScenarioSeeds { target: 4, offset: 5 };
        let s0 = make_transfer_scenario(1.01, 3.01, 0.0, 0.5, 512, seeds).unwrap();
        let src = s0.source();
        for &g in s0.target.grid() {
            assert_eq!(src.evaluate(g).unwrap(), s0.target.evaluate(g).unwrap());
        }
        let s1 = make_transfer_scenario(1.01, 3.01, 1.0, 0.5, 512, seeds).unwrap();
        let s2 = make_transfer_scenario(1.01, 3.01, 2.0, 0.5, 512, seeds).unwrap();
        for (a, b) in s1.offset.values().iter().zip(s2.offset.values()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn sampled_function_json_roundtrip() {
        let k = MaternKernel::new(1.01, 0.5).unwrap();
        let f = sample_gp(&k, 64, 2).unwrap();
        let back: SampledFunction = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.evaluate(0.123).unwrap(), f.evaluate(0.123).unwrap());
    }

    #[test]
    fn dataset_csv_layout() {
        let d = Dataset::new(
            Points::from_scalars(vec![0.25, 0.5]).unwrap(),
            vec![1.0, -2.0],
            Domain::Source,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,y,domain\n0.25,1,source\n0.5,-2,source\n");
    }
}
