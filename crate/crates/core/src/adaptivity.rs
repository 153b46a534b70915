//! Smoothness adaptation: pick the candidate α (and so λ) without knowing
//! the true Sobolev order, by a train/validate split or by Lepski's rule.
//! Also holds the K-fold selection of the schedule constant C.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::Quadrature;
use crate::kernels::KernelSpec;
use crate::krr::{predict_with_cross, schedule_lambda, FittedKrr, KrrSystem, RegSchedule, ScheduleKind};
use crate::points::Predictor;

/// How the candidate smoothness values are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GridSpec {
    Explicit { values: Vec<f64> },
    /// {jQ/log n : j = 1..count}.
    QSpaced { q: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessGrid {
    candidates: Vec<f64>,
    /// Schedule constant of each candidate, index-aligned with `candidates`.
    constants: Vec<f64>,
    pub kind: ScheduleKind,
    pub spec: GridSpec,
    pub dim: usize,
}

impl SmoothnessGrid {
    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Every candidate exceeds d/2.
    pub fn is_theory_conformant(&self) -> bool {
        self.candidates.iter().all(|&a| a > self.dim as f64 / 2.0)
    }

    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constants.iter_mut().for_each(|c| *c = constant);
        self
    }

    /// One constant per candidate, in ascending-α order.
    pub fn with_candidate_constants(mut self, constants: &[f64]) -> Result<Self> {
        if constants.len() != self.candidates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.candidates.len(),
                found: constants.len(),
            });
        }
        self.constants = constants.to_vec();
        Ok(self)
    }

    /// Schedule of candidate `alpha`; a value off the grid gets the constant
    /// of the nearest candidate.
    pub fn schedule(&self, alpha: f64) -> RegSchedule {
        let i = self
            .candidates
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - alpha).abs().total_cmp(&(b.1 - alpha).abs()))
            .map_or(0, |(i, _)| i);
        RegSchedule {
            kind: self.kind,
            constant: self.constants.get(i).copied().unwrap_or(f64::NAN),
            smoothness: alpha,
            dim: self.dim,
        }
    }
}

/// Builds the Gaussian-schedule candidate grid for sample size `n`.
pub fn build_grid(n: usize, dim: usize, spec: &GridSpec, constant: f64) -> Result<SmoothnessGrid> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut candidates = match spec {
        GridSpec::Explicit { values } => {
            if values.is_empty() {
                return Err(Error::EmptyInput("smoothness grid"));
            }
            if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "smoothness candidates must be positive, got {bad}"
                )));
            }
            values.clone()
        }
        &GridSpec::QSpaced { q, count } => {
            if n < 3 {
                return Err(Error::InvalidParameter(format!(
                    "Q-spaced grid needs n >= 3, got {n}"
                )));
            }
            if !(q > 0.0) || count == 0 {
                return Err(Error::InvalidParameter(
                    "Q-spaced grid needs Q > 0 and at least one candidate".into(),
                ));
            }
            let ln = (n as f64).ln();
            (1..=count).map(|j| j as f64 * q / ln).collect()
        }
    };
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    Ok(SmoothnessGrid {
        constants: vec![constant; candidates.len()],
        candidates,
        kind: ScheduleKind::GaussianExponential,
        spec: spec.clone(),
        dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMethod {
    TrainValidate,
    Lepski,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptOptions {
    pub method: AdaptMethod,
    /// Fraction of the data used for fitting in train/validate.
    pub split_fraction: f64,
    /// Refit the winner on the full data after train/validate.
    pub refit: bool,
    pub lepski_c0: f64,
    pub quadrature_points: usize,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            method: AdaptMethod::TrainValidate,
            split_fraction: 0.5,
            refit: false,
            lepski_c0: 1.0,
            quadrature_points: crate::evaluation::DEFAULT_QUADRATURE_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub alpha: f64,
    pub lambda: f64,
    pub underflow: bool,
    /// Mean squared residual on the validation half (train/validate only).
    pub validation_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LepskiComparison {
    pub alpha: f64,
    /// The rougher candidate compared against.
    pub other: f64,
    pub distance: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSelection {
    pub method: AdaptMethod,
    pub alpha: f64,
    pub lambda: f64,
    pub candidates: Vec<CandidateScore>,
    pub comparisons: Vec<LepskiComparison>,
    /// Lepski fell back to the roughest candidate because every other failed.
    pub degenerate: bool,
    /// Size of the fitting half (train/validate) or of the full sample.
    pub fit_size: usize,
}

impl AdaptiveSelection {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_grid(grid: &SmoothnessGrid) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("smoothness grid"));
    }
    Ok(())
}

/// Splits by index order: the first `round(n·fraction)` points fit, the rest validate.
fn split_sizes(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n1 = (n as f64 * fraction).round() as usize;
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidParameter(format!(
            "split of {n} points at fraction {fraction} leaves an empty half"
        )));
    }
    Ok(n1)
}

/// Fits one model per candidate on the first half and keeps the one with the
/// smallest validation MSE on the second half, ties going to the larger α.
pub fn select_train_validate(
    data: &Dataset,
    grid: &SmoothnessGrid,
    kernel: &KernelSpec,
    opts: &AdaptOptions,
) -> Result<(AdaptiveSelection, FittedKrr)> {
    check_grid(grid)?;
    let n1 = split_sizes(data.len(), opts.split_fraction)?;
    let train = data.subset(0..n1);
    let valid = data.subset(n1..data.len());
    let system = KrrSystem::new(*kernel, &train)?;
    let cross = system.cross(&valid.x);

    let mut candidates = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    let mut best = 0;
    for &alpha in grid.candidates() {
        let lam = schedule_lambda(&grid.schedule(alpha), n1)?;
        let model = system.fit(lam.value)?;
        let pred = predict_with_cross(&cross, &model);
        let mse = pred
            .iter()
            .zip(&valid.y)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / valid.len() as f64;
        // candidates ascend, so `<=` hands ties to the larger α
        let best_mse = candidates
            .get(best)
            .and_then(|c: &CandidateScore| c.validation_mse)
            .unwrap_or(f64::INFINITY);
        if mse <= best_mse || best_mse.is_nan() {
            best = candidates.len();
        }
        candidates.push(CandidateScore {
            alpha,
            lambda: lam.value,
            underflow: lam.underflow,
            validation_mse: Some(mse),
        });
        models.push(model);
    }
    let mut model = models.swap_remove(best);
    let mut selection = AdaptiveSelection {
        method: AdaptMethod::TrainValidate,
        alpha: candidates[best].alpha,
        lambda: candidates[best].lambda,
        candidates,
        comparisons: Vec::new(),
        degenerate: false,
        fit_size: n1,
    };
    if opts.refit {
        let lam = schedule_lambda(&grid.schedule(selection.alpha), data.len())?;
        model = crate::krr::fit(kernel, data, lam.value)?;
        selection.lambda = lam.value;
        selection.fit_size = data.len();
    }
    Ok((selection, model))
}

/// The Lepski threshold c₀ (n / log n)^{−α/(2α+d)}.
pub fn lepski_threshold(c0: f64, n: usize, alpha: f64, dim: usize) -> f64 {
    let n = n as f64;
    c0 * (n / n.ln()).powf(-alpha / (2.0 * alpha + dim as f64))
}

/// Lepski's rule on the full sample: the largest α whose fit stays within
/// the rate threshold of every rougher candidate's fit. Distances are L2
/// over [0, 1] under the known uniform design, by Simpson quadrature.
pub fn select_lepski(
    data: &Dataset,
    grid: &SmoothnessGrid,
    kernel: &KernelSpec,
    c0: f64,
    oracle: &Quadrature,
) -> Result<(AdaptiveSelection, FittedKrr)> {
    check_grid(grid)?;
    if !(c0 > 0.0) {
        return Err(Error::InvalidParameter(format!("c0 must be positive, got {c0}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidParameter("Lepski needs at least two points".into()));
    }
    let system = KrrSystem::new(*kernel, data)?;
    let mut candidates = Vec::with_capacity(grid.len());
    let mut fits = Vec::with_capacity(grid.len());
    for &alpha in grid.candidates() {
        let lam = schedule_lambda(&grid.schedule(alpha), n)?;
        fits.push(system.fit(lam.value)?);
        candidates.push(CandidateScore {
            alpha,
            lambda: lam.value,
            underflow: lam.underflow,
            validation_mse: None,
        });
    }
    let values = oracle.evaluate_fits(&fits)?;

    let alphas = grid.candidates();
    let mut comparisons = Vec::new();
    let mut chosen = 0;
    for (i, &alpha) in alphas.iter().enumerate() {
        let mut ok = true;
        for (j, &other) in alphas.iter().enumerate().take(i) {
            let distance = oracle.squared_distance(&values[i], &values[j]).sqrt();
            let threshold = lepski_threshold(c0, n, other, grid.dim);
            let passed = distance <= threshold;
            ok &= passed;
            comparisons.push(LepskiComparison {
                alpha,
                other,
                distance,
                threshold,
                passed,
            });
        }
        if ok {
            chosen = i;
        }
    }
    let selection = AdaptiveSelection {
        method: AdaptMethod::Lepski,
        alpha: alphas[chosen],
        lambda: candidates[chosen].lambda,
        candidates,
        comparisons,
        degenerate: chosen == 0 && alphas.len() > 1,
        fit_size: n,
    };
    Ok((selection, fits.swap_remove(chosen)))
}

/// Dispatches on `opts.method`.
pub fn select_adaptive(
    data: &Dataset,
    grid: &SmoothnessGrid,
    kernel: &KernelSpec,
    opts: &AdaptOptions,
) -> Result<(AdaptiveSelection, FittedKrr)> {
    match opts.method {
        AdaptMethod::TrainValidate => select_train_validate(data, grid, kernel, opts),
        AdaptMethod::Lepski => {
            let q = Quadrature::new(opts.quadrature_points)?;
            select_lepski(data, grid, kernel, opts.lepski_c0, &q)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSelection {
    pub chosen: f64,
    /// (C, mean held-out MSE) for each distinct grid value.
    pub scores: Vec<(f64, f64)>,
    pub folds: usize,
    /// Number of datasets whose CV errors were averaged.
    pub datasets: usize,
}

/// Mean held-out squared error over `folds` contiguous index blocks.
pub fn kfold_mse<F, P>(data: &Dataset, folds: usize, fit: F) -> Result<f64>
where
    F: Fn(&Dataset) -> Result<P>,
    P: Predictor,
{
    let n = data.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidParameter(format!(
            "{folds}-fold CV is impossible with {n} points"
        )));
    }
    let bounds: Vec<usize> = (0..=folds).map(|k| k * n / folds).collect();
    let mut sse = 0.0;
    for k in 0..folds {
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let model = fit(&data.subset((0..lo).chain(hi..n)))?;
        let held = data.subset(lo..hi);
        let pred = model.predict_batch(&held.x)?;
        sse += pred.iter().zip(&held.y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
    }
    Ok(sse / n as f64)
}

/// K-fold CV over a grid of constants. `fit` builds a predictor from the
/// training folds for a given constant. Folds are contiguous index blocks;
/// ties go to the smaller constant.
pub fn select_constant_cv<F, P>(
    data: &Dataset,
    grid: &[f64],
    folds: usize,
    fit: F,
) -> Result<ConstantSelection>
where
    F: Fn(&Dataset, f64) -> Result<P> + Sync,
    P: Predictor,
{
    select_constant_cv_pooled(std::slice::from_ref(data), grid, folds, |_, train, c| {
        fit(train, c)
    })
}

/// [`select_constant_cv`] with the CV error averaged over several
/// independent datasets. `fit` also receives the dataset index.
/// Grid points and datasets are scored in parallel; the reduction order is
/// fixed, so the result does not depend on the thread count.
pub fn select_constant_cv_pooled<F, P>(
    datasets: &[Dataset],
    grid: &[f64],
    folds: usize,
    fit: F,
) -> Result<ConstantSelection>
where
    F: Fn(usize, &Dataset, f64) -> Result<P> + Sync,
    P: Predictor,
{
    let mut values: Vec<f64> = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.is_empty() {
        return Err(Error::EmptyInput("constant grid"));
    }
    if datasets.is_empty() {
        return Err(Error::EmptyInput("CV datasets"));
    }
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|i| (0..datasets.len()).map(move |k| (i, k)))
        .collect();
    let mse = jobs
        .par_iter()
        .map(|&(i, k)| kfold_mse(&datasets[k], folds, |train| fit(k, train, values[i])))
        .collect::<Result<Vec<f64>>>()?;
    let scores: Vec<(f64, f64)> = values
        .iter()
        .zip(mse.chunks(datasets.len()))
        .map(|(&c, m)| (c, m.iter().sum::<f64>() / m.len() as f64))
        .collect();
    let chosen = scores
        .iter()
        .fold(None::<(f64, f64)>, |best, &(c, s)| match best {
            Some((_, bs)) if bs <= s || s.is_nan() => best,
            _ => Some((c, s)),
        })
        .map(|(c, _)| c)
        .unwrap_or(values[0]);
    Ok(ConstantSelection {
        chosen,
        scores,
        folds,
        datasets: datasets.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, Domain};
    use crate::kernels::GaussianKernel;
    use crate::points::{FnPredictor, Points};
    use proptest::prelude::*;

    fn gauss() -> KernelSpec {
        GaussianKernel::default().into()
    }

    fn explicit(values: &[f64]) -> GridSpec {
        GridSpec::Explicit {
            values: values.to_vec(),
        }
    }

    fn noisy(n: usize, seed: u64) -> Dataset {
        let f = FnPredictor(|x: f64| (2.0 * std::f64::consts::PI * x).sin());
        make_dataset(&f, n, 0.3, seed, Domain::Target).unwrap()
    }

    #[test]
    fn explicit_grid_kept() {
        let g = build_grid(100, 1, &explicit(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0).unwrap();
        assert_eq!(g.candidates(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(g.is_theory_conformant());
        let g = build_grid(100, 1, &explicit(&[3.0, 1.0, 2.0, 1.0]), 1.0).unwrap();
        assert_eq!(g.candidates(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn q_spaced_grid() {
        let n = 10f64.exp().round() as usize; // log n ≈ 10
        let g = build_grid(n, 1, &GridSpec::QSpaced { q: 1.0, count: 3 }, 1.0).unwrap();
        let ln = (n as f64).ln();
        for (j, a) in g.candidates().iter().enumerate() {
            assert!((a - (j + 1) as f64 / ln).abs() < 1e-15);
            assert!((a - 0.1 * (j + 1) as f64).abs() < 1e-5);
        }
        assert!(!g.is_theory_conformant());
    }

    #[test]
    fn q_spacing_scales_with_log_n() {
        let spec = GridSpec::QSpaced { q: 2.0, count: 4 };
        let a = build_grid(500, 1, &spec, 1.0).unwrap();
        let b = build_grid(1000, 1, &spec, 1.0).unwrap();
        let gap = |g: &SmoothnessGrid| g.candidates()[1] - g.candidates()[0];
        let want = 1000f64.ln() / 500f64.ln();
        assert!((gap(&a) / gap(&b) - want).abs() < 1e-12);
    }

    #[test]
    fn grid_errors() {
        assert!(build_grid(100, 1, &explicit(&[]), 1.0).is_err());
        assert!(build_grid(100, 1, &explicit(&[0.0]), 1.0).is_err());
        assert!(build_grid(2, 1, &GridSpec::QSpaced { q: 1.0, count: 2 }, 1.0).is_err());
        assert!(build_grid(100, 1, &GridSpec::QSpaced { q: 1.0, count: 0 }, 1.0).is_err());
    }

    #[test]
    fn single_candidate_selected() {
        let data = noisy(40, 1);
        let g = build_grid(40, 1, &explicit(&[2.5]), 1.0).unwrap();
        let (s, m) = select_train_validate(&data, &g, &gauss(), &AdaptOptions::default()).unwrap();
        assert_eq!(s.alpha, 2.5);
        assert_eq!(s.candidates.len(), 1);
        assert_eq!(m.n(), 20);
        let (s, _) = select_lepski(&data, &g, &gauss(), 1.0, &Quadrature::new(129).unwrap()).unwrap();
        assert_eq!(s.alpha, 2.5);
        assert!(s.comparisons.is_empty());
        assert!(!s.degenerate);
    }

    #[test]
    fn representable_candidate_wins() {
        // Noiseless data. At tiny λ the fit reproduces the smooth signal on
        // the validation half; a huge schedule constant for small α drives
        // λ so large that those fits are effectively zero.
        let f = FnPredictor(|x: f64| 1.0 + 0.5 * x);
        let data = make_dataset(&f, 60, 0.0, 3, Domain::Target).unwrap();
        let g = SmoothnessGrid {
            kind: ScheduleKind::Fixed,
            ..build_grid(60, 1, &explicit(&[1.0]), 1e-10).unwrap()
        };
        let good = select_train_validate(&data, &g, &gauss(), &AdaptOptions::default()).unwrap().0;
        let mse_good = good.candidates[0].validation_mse.unwrap();
        let g = SmoothnessGrid {
            kind: ScheduleKind::Fixed,
            ..build_grid(60, 1, &explicit(&[1.0]), 1e8).unwrap()
        };
        let bad = select_train_validate(&data, &g, &gauss(), &AdaptOptions::default()).unwrap().0;
        assert!(mse_good < 1e-4 && bad.candidates[0].validation_mse.unwrap() > 0.5);
    }

    #[test]
    fn split_errors() {
        let data = noisy(1, 1);
        let g = build_grid(40, 1, &explicit(&[1.0]), 1.0).unwrap();
        assert!(select_train_validate(&data, &g, &gauss(), &AdaptOptions::default()).is_err());
        let opts = AdaptOptions {
            split_fraction: 1.0,
            ..Default::default()
        };
        assert!(select_train_validate(&noisy(10, 1), &g, &gauss(), &opts).is_err());
    }

    #[test]
    fn refit_uses_full_sample() {
        let data = noisy(50, 2);
        let g = build_grid(50, 1, &explicit(&[1.0, 3.0]), 1.0).unwrap();
        let opts = AdaptOptions {
            refit: true,
            ..Default::default()
        };
        let (s, m) = select_train_validate(&data, &g, &gauss(), &opts).unwrap();
        assert_eq!(m.n(), 50);
        assert_eq!(s.fit_size, 50);
    }

    #[test]
    fn lepski_identical_fits_pick_largest() {
        let x = Points::from_scalars((0..30).map(|i| i as f64 / 29.0).collect()).unwrap();
        let data = Dataset::new(x, vec![0.0; 30], Domain::Target).unwrap();
        let g = build_grid(30, 1, &explicit(&[1.0, 2.0, 3.0]), 1.0).unwrap();
        let (s, _) = select_lepski(&data, &g, &gauss(), 1.0, &Quadrature::new(257).unwrap()).unwrap();
        assert_eq!(s.alpha, 3.0);
        assert_eq!(s.comparisons.len(), 3);
        assert!(s.comparisons.iter().all(|c| c.distance == 0.0 && c.passed));
    }

    #[test]
    fn lepski_degenerate_when_all_fail() {
        let data = noisy(60, 4);
        let g = build_grid(60, 1, &explicit(&[0.3, 5.0]), 1.0).unwrap();
        let (s, m) =
            select_lepski(&data, &g, &gauss(), 1e-9, &Quadrature::new(257).unwrap()).unwrap();
        assert_eq!(s.alpha, 0.3);
        assert!(s.degenerate);
        assert_eq!(m.lambda, s.lambda);
    }

    #[test]
    fn lepski_ledger_covers_rougher_candidates() {
        let data = noisy(120, 5);
        let g = build_grid(120, 1, &explicit(&[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0).unwrap();
        let (s, _) = select_lepski(&data, &g, &gauss(), 1.0, &Quadrature::new(513).unwrap()).unwrap();
        let passed_all = s
            .comparisons
            .iter()
            .filter(|c| c.alpha == s.alpha)
            .all(|c| c.passed);
        let count = s.comparisons.iter().filter(|c| c.alpha == s.alpha).count();
        assert!(passed_all);
        assert_eq!(count, g.candidates().iter().filter(|&&a| a < s.alpha).count());
    }

    #[test]
    fn lepski_threshold_formula() {
        let t = lepski_threshold(2.0, 1000, 2.0, 1);
        let want = 2.0 * (1000.0 / 1000f64.ln()).powf(-0.4);
        assert!((t - want).abs() < 1e-15);
    }

    #[test]
    fn constant_cv_single_and_duplicates() {
        let data = noisy(60, 6);
        let k = gauss();
        let fit = |d: &Dataset, c: f64| {
            let lam = schedule_lambda(&RegSchedule::gaussian(c, 2.0, 1), d.len())?;
            crate::krr::fit(&k, d, lam.value)
        };
        assert_eq!(select_constant_cv(&data, &[0.7], 5, fit).unwrap().chosen, 0.7);
        let a = select_constant_cv(&data, &[0.1, 1.0, 3.0], 5, fit).unwrap();
        let b = select_constant_cv(&data, &[3.0, 0.1, 1.0, 0.1, 3.0], 5, fit).unwrap();
        assert_eq!(a, b);
        assert!(select_constant_cv(&data, &[], 5, fit).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn train_validate_is_argmin(seed in 0u64..500, perm in Just(()).prop_perturb(|_, mut r| {
            use rand::seq::SliceRandom;
            let mut v = vec![0.8, 1.5, 2.0, 3.0, 4.5];
            v.shuffle(&mut r);
            v
        })) {
            let data = noisy(80, seed);
            let sorted = build_grid(80, 1, &explicit(&[0.8, 1.5, 2.0, 3.0, 4.5]), 1.0).unwrap();
            let shuffled = build_grid(80, 1, &explicit(&perm), 1.0).unwrap();
            let opts = AdaptOptions::default();
            let (a, _) = select_train_validate(&data, &sorted, &gauss(), &opts).unwrap();
            let (b, _) = select_train_validate(&data, &shuffled, &gauss(), &opts).unwrap();
            prop_assert_eq!(a.alpha, b.alpha);
            let chosen = a.candidates.iter().find(|c| c.alpha == a.alpha).unwrap().validation_mse.unwrap();
            for c in &a.candidates {
                prop_assert!(chosen <= c.validation_mse.unwrap());
            }
        }
    }
}
