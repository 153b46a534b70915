//! Finite basis expansion: least squares on a truncated cosine or cubic
//! B-spline basis, and its two-phase transfer variant.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::adaptivity::kfold_mse;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{ensure_sequential, factor_with_jitter, JitterPolicy};
use crate::points::{check_dim, Points, Predictor};

/// Ridge used when the design matrix is numerically rank deficient.
pub const RIDGE_FALLBACK: f64 = 1e-10;

/// Relative threshold on |R_ii| below which the QR solve is abandoned.
const RANK_TOL: f64 = 1e-10;

pub const DEFAULT_TRUNCATIONS: [usize; 15] = [2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// {1, √2 cos(πjx) : j = 1..M}.
    Fourier,
    /// Clamped cubic B-splines on M uniform interior knots (M + 4 functions).
    Bspline,
}

impl BasisKind {
    pub fn size(&self, m: usize) -> usize {
        match self {
            BasisKind::Fourier => m + 1,
            BasisKind::Bspline => m + 4,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BasisKind::Fourier => "fourier",
            BasisKind::Bspline => "bspline",
        }
    }

    /// All `size(m)` basis functions at `x`.
    pub fn values(&self, m: usize, x: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.size(m)];
        self.fill(m, x, &mut out)?;
        Ok(out)
    }

    /// All basis functions at `x`, written into `out` (length `size(m)`).
    fn fill(&self, m: usize, x: f64, out: &mut [f64]) -> Result<()> {
        match self {
            BasisKind::Fourier => {
                out[0] = 1.0;
                for j in 1..=m {
                    out[j] = fourier_basis(j, x);
                }
                Ok(())
            }
            BasisKind::Bspline => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Extrapolation { x, lo: 0.0, hi: 1.0 });
                }
                out.fill(0.0);
                let (span, vals) = cubic_bspline_nonzero(m, x);
                out[span - 3..=span].copy_from_slice(&vals);
                Ok(())
            }
        }
    }
}

/// √2 cos(πjx), the j-th cosine basis function on [0, 1].
pub fn fourier_basis(j: usize, x: f64) -> f64 {
    std::f64::consts::SQRT_2 * (std::f64::consts::PI * j as f64 * x).cos()
}

fn clamped_knots(m: usize) -> Vec<f64> {
    let mut t = vec![0.0; 4];
    t.extend((1..=m).map(|i| i as f64 / (m + 1) as f64));
    t.extend([1.0; 4]);
    t
}

/// Index of the last nonzero basis function and the four nonzero cubic
/// B-spline values at `x` (Cox–de Boor recursion).
fn cubic_bspline_nonzero(m: usize, x: f64) -> (usize, [f64; 4]) {
    const P: usize = 3;
    let t = clamped_knots(m);
    let last = m + P; // highest valid span index
    let span = if x >= 1.0 {
        last
    } else {
        // t[span] <= x < t[span + 1]
        P + ((x * (m + 1) as f64).floor() as usize).min(m)
    };
    let mut n = [0.0; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    n[0] = 1.0;
    for j in 1..=P {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    (span, n)
}

fn design_matrix(kind: BasisKind, m: usize, x: &Points) -> Result<Mat<f64>> {
    if x.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: x.dim(),
        });
    }
    let p = kind.size(m);
    let mut out = Mat::zeros(x.len(), p);
    let mut row = vec![0.0; p];
    for (i, xi) in x.rows().enumerate() {
        kind.fill(m, xi[0], &mut row)?;
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbeModel {
    pub kind: BasisKind,
    pub truncation: usize,
    pub coefficients: Vec<f64>,
    /// Whether the ridge fallback was needed.
    pub ridge: bool,
}

impl FbeModel {
    /// The identically-zero expansion.
    pub fn zero(kind: BasisKind, truncation: usize) -> Self {
        Self {
            kind,
            truncation,
            coefficients: vec![0.0; kind.size(truncation)],
            ridge: false,
        }
    }

    pub fn predict(&self, x: f64) -> Result<f64> {
        let mut row = vec![0.0; self.coefficients.len()];
        self.kind.fill(self.truncation, x, &mut row)?;
        Ok(row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }
}

impl Predictor for FbeModel {
    fn dim(&self) -> usize {
        1
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(1, points)?;
        points.rows().map(|x| self.predict(x[0])).collect()
    }
}

fn full_rank(r: faer::MatRef<'_, f64>) -> bool {
    let diag: Vec<f64> = (0..r.ncols().min(r.nrows())).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    diag.len() == r.ncols() && max > 0.0 && diag.iter().all(|&d| d > RANK_TOL * max)
}

/// Least-squares fit of the first `truncation` basis functions.
pub fn fit_fbe(data: &Dataset, kind: BasisKind, truncation: usize) -> Result<FbeModel> {
    if truncation == 0 && kind == BasisKind::Fourier {
        return Err(Error::InvalidParameter("truncation must be >= 1".into()));
    }
    ensure_sequential();
    let x = design_matrix(kind, truncation, &data.x)?;
    let (rows, cols) = (x.nrows(), x.ncols());
    let y = Mat::from_fn(rows, 1, |i, _| data.y[i]);
    if rows >= cols {
        let qr = x.qr();
        if full_rank(qr.thin_R()) {
            let beta = qr.solve_lstsq(&y);
            let coefficients: Vec<f64> = (0..cols).map(|j| beta[(j, 0)]).collect();
            if coefficients.iter().all(|v| v.is_finite()) {
                return Ok(FbeModel {
                    kind,
                    truncation,
                    coefficients,
                    ridge: false,
                });
            }
        }
    }
    // (XᵀX + εI) β = Xᵀy
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let rhs: Vec<f64> = (0..cols).map(|j| xty[(j, 0)]).collect();
    let policy = JitterPolicy { tiers: Vec::new() };
    let f = factor_with_jitter(&xtx, RIDGE_FALLBACK, &policy)
        .ok_or(Error::RankDeficient { rows, cols })?;
    let coefficients = f.solve(&rhs);
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient { rows, cols });
    }
    Ok(FbeModel {
        kind,
        truncation,
        coefficients,
        ridge: true,
    })
}

/// Truncation chosen by K-fold CV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationSelection {
    pub chosen: usize,
    pub scores: Vec<(usize, f64)>,
}

/// K-fold CV over `grid`; ties go to the smaller truncation.
pub fn select_truncation_cv(
    data: &Dataset,
    kind: BasisKind,
    grid: &[usize],
    folds: usize,
) -> Result<TruncationSelection> {
    let mut values = grid.to_vec();
    values.sort_unstable();
    values.dedup();
    if values.is_empty() {
        return Err(Error::EmptyInput("truncation grid"));
    }
    let mut scores = Vec::with_capacity(values.len());
    let mut best: Option<(usize, f64)> = None;
    for &m in &values {
        let s = kfold_mse(data, folds, |train| fit_fbe(train, kind, m))?;
        scores.push((m, s));
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((m, s));
        }
    }
    Ok(TruncationSelection {
        chosen: best.map(|b| b.0).unwrap_or(values[0]),
        scores,
    })
}

/// A fixed truncation or one chosen by CV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Fixed(usize),
    Cv { grid: Vec<usize>, folds: usize },
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Cv {
            grid: DEFAULT_TRUNCATIONS.to_vec(),
            folds: 5,
        }
    }
}

fn fit_with(data: &Dataset, kind: BasisKind, t: &Truncation) -> Result<(FbeModel, Option<TruncationSelection>)> {
    match t {
        Truncation::Fixed(m) => Ok((fit_fbe(data, kind, *m)?, None)),
        Truncation::Cv { grid, folds } => {
            let sel = select_truncation_cv(data, kind, grid, *folds)?;
            Ok((fit_fbe(data, kind, sel.chosen)?, Some(sel)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbeTransferModel {
    pub source: FbeModel,
    pub offset: FbeModel,
    pub source_cv: Option<TruncationSelection>,
    pub offset_cv: Option<TruncationSelection>,
}

impl Predictor for FbeTransferModel {
    fn dim(&self) -> usize {
        1
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        let a = self.source.predict_batch(points)?;
        let b = self.offset.predict_batch(points)?;
        Ok(a.iter().zip(&b).map(|(u, v)| u + v).collect())
    }
}

/// Phase 2 of the FBE transfer given any phase-1 expansion.
pub fn fit_fbe_offset(
    source_model: FbeModel,
    target: &Dataset,
    kind: BasisKind,
    offset_truncation: &Truncation,
) -> Result<FbeTransferModel> {
    let phase = |e: Error| e.in_phase(crate::satl::OFFSET_PHASE);
    let fitted = source_model.predict_batch(&target.x).map_err(phase)?;
    let residuals = target.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let labelled = target.with_responses(residuals).map_err(phase)?;
    let (offset, offset_cv) = fit_with(&labelled, kind, offset_truncation).map_err(phase)?;
    Ok(FbeTransferModel {
        source: source_model,
        offset,
        source_cv: None,
        offset_cv,
    })
}

/// Two-phase FBE transfer: expansion on the source, expansion of the
/// target residuals, prediction by their sum.
pub fn fit_fbe_transfer(
    source: &Dataset,
    target: &Dataset,
    kind: BasisKind,
    source_truncation: &Truncation,
    offset_truncation: &Truncation,
) -> Result<FbeTransferModel> {
    let (source_model, source_cv) = fit_with(source, kind, source_truncation)
        .map_err(|e| e.in_phase(crate::satl::SOURCE_PHASE))?;
    let mut m = fit_fbe_offset(source_model, target, kind, offset_truncation)?;
    m.source_cv = source_cv;
    Ok(m)
}

/// Target-only FBE with the truncation chosen by CV or fixed.
pub fn fit_fbe_target_only(
    target: &Dataset,
    kind: BasisKind,
    truncation: &Truncation,
) -> Result<(FbeModel, Option<TruncationSelection>)> {
    fit_with(target, kind, truncation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, Domain};
    use crate::evaluation::simpson;
    use crate::points::{uniform_grid, FnPredictor};
    use proptest::prelude::*;

    fn data<F: Fn(f64) -> f64>(f: F, n: usize, noise: f64, seed: u64) -> Dataset {
        make_dataset(&FnPredictor(f), n, noise, seed, Domain::Target).unwrap()
    }

    #[test]
    fn fourier_examples() {
        assert!((fourier_basis(1, 0.0) - 1.41421).abs() < 1e-5);
        assert!((fourier_basis(2, 0.5) + std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn fourier_orthonormal() {
        let xs = uniform_grid(1025);
        for j in 1..=3 {
            for k in 1..=3 {
                let v: Vec<f64> = xs.iter().map(|&x| fourier_basis(j, x) * fourier_basis(k, x)).collect();
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((simpson(&v, 0.0, 1.0).unwrap() - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn bspline_partition_of_unity() {
        for m in [1, 4, 9] {
            for &x in &uniform_grid(101) {
                let mut row = vec![0.0; BasisKind::Bspline.size(m)];
                BasisKind::Bspline.fill(m, x, &mut row).unwrap();
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14, "m={m} x={x}");
                assert!(row.iter().all(|&v| v >= -1e-15));
            }
        }
        let mut row = vec![0.0; 7];
        BasisKind::Bspline.fill(3, 1.0, &mut row).unwrap();
        assert_eq!(row[6], 1.0);
        assert!(BasisKind::Bspline.fill(3, 1.5, &mut row).is_err());
    }

    #[test]
    fn constant_data_recovered() {
        let d = data(|_| 2.5, 50, 0.0, 1);
        let m = fit_fbe(&d, BasisKind::Fourier, 6).unwrap();
        assert!((m.coefficients[0] - 2.5).abs() < 1e-8);
        assert!(m.coefficients[1..].iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn single_cosine_recovered() {
        let d = data(|x| fourier_basis(1, x), 50, 0.0, 2);
        let m = fit_fbe(&d, BasisKind::Fourier, 1).unwrap();
        assert!((m.coefficients[1] - 1.0).abs() < 1e-8);
        assert!(m.coefficients[0].abs() < 1e-8);
    }

    #[test]
    fn cubic_splines_reproduce_cubics() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x + 3.0 * x * x * x;
        let d = data(f, 200, 0.0, 3);
        let m = fit_fbe(&d, BasisKind::Bspline, 8).unwrap();
        let pred = m.predict_batch(&d.x).unwrap();
        let worst = pred.iter().zip(&d.y).map(|(p, y)| (p - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn underdetermined_uses_ridge() {
        let d = data(|x| x, 5, 0.0, 4);
        let m = fit_fbe(&d, BasisKind::Fourier, 10).unwrap();
        assert!(m.ridge);
        assert!(m.coefficients.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_offset_transfer() {
        let f = |x: f64| 1.0 + fourier_basis(2, x);
        let s = data(f, 200, 0.0, 5);
        let t = data(f, 50, 0.0, 6);
        let m = fit_fbe_transfer(&s, &t, BasisKind::Fourier, &Truncation::Fixed(4), &Truncation::Fixed(4))
            .unwrap();
        assert!(m.offset.coefficients.iter().all(|b| b.abs() < 1e-6));
    }

    #[test]
    fn zero_phase_one_is_target_only() {
        let t = data(|x| (3.0 * x).sin(), 60, 0.1, 7);
        let tr = Truncation::Cv {
            grid: vec![2, 4, 6],
            folds: 5,
        };
        let m = fit_fbe_offset(FbeModel::zero(BasisKind::Fourier, 4), &t, BasisKind::Fourier, &tr).unwrap();
        let (alone, _) = fit_fbe_target_only(&t, BasisKind::Fourier, &tr).unwrap();
        assert_eq!(m.offset, alone);
    }

    #[test]
    fn transfer_is_sum_of_phases() {
        let s = data(|x| (4.0 * x).cos(), 300, 0.3, 8);
        let t = data(|x| (4.0 * x).cos() + x, 50, 0.3, 9);
        let tr = Truncation::default();
        let m = fit_fbe_transfer(&s, &t, BasisKind::Bspline, &tr, &tr).unwrap();
        let p1 = fit_fbe(&s, BasisKind::Bspline, m.source_cv.as_ref().unwrap().chosen).unwrap();
        let resid: Vec<f64> = t.y.iter().zip(p1.predict_batch(&t.x).unwrap()).map(|(y, f)| y - f).collect();
        let p2 = fit_fbe(&t.with_responses(resid).unwrap(), BasisKind::Bspline, m.offset_cv.as_ref().unwrap().chosen)
            .unwrap();
        let q = Points::from_scalars(vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let got = m.predict_batch(&q).unwrap();
        for (g, x) in got.iter().zip(q.rows()) {
            let want = p1.predict(x[0]).unwrap() + p2.predict(x[0]).unwrap();
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn json_roundtrip() {
        let m = fit_fbe(&data(|x| x, 30, 0.1, 10), BasisKind::Bspline, 3).unwrap();
        let back: FbeModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn residual_orthogonal_to_design(seed in 0u64..1000, m in 1usize..12, bspline in any::<bool>()) {
            let kind = if bspline { BasisKind::Bspline } else { BasisKind::Fourier };
            let d = data(|x| (5.0 * x).sin() + x * x, 80, 0.3, seed);
            let model = fit_fbe(&d, kind, m).unwrap();
            prop_assume!(!model.ridge);
            let x = design_matrix(kind, m, &d.x).unwrap();
            let pred = model.predict_batch(&d.x).unwrap();
            let r: Vec<f64> = d.y.iter().zip(&pred).map(|(y, p)| y - p).collect();
            let scale = d.y.iter().map(|v| v.abs()).sum::<f64>();
            for j in 0..x.ncols() {
                let dot: f64 = (0..x.nrows()).map(|i| x[(i, j)] * r[i]).sum();
                prop_assert!(dot.abs() <= 1e-8 * scale, "column {}: {}", j, dot);
            }
        }

        #[test]
        fn nested_fourier_mse_nonincreasing(seed in 0u64..1000) {
            let f = |x: f64| 0.5 + fourier_basis(1, x) - 0.3 * fourier_basis(3, x);
            let d = data(f, 60, 0.0, seed);
            let mut prev = f64::INFINITY;
            for m in 1..=8 {
                let model = fit_fbe(&d, BasisKind::Fourier, m).unwrap();
                let pred = model.predict_batch(&d.x).unwrap();
                let mse = pred.iter().zip(&d.y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / 60.0;
                prop_assert!(mse <= prev + 1e-20);
                prev = mse;
            }
        }
    }
}
