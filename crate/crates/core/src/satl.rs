//! Two-phase offset transfer: fit the source, fit the target–source offset
//! on pseudo-labels, and predict with their sum.

use serde::{Deserialize, Serialize};

use crate::adaptivity::{select_adaptive, AdaptOptions, AdaptiveSelection, SmoothnessGrid};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::krr::{fit, FittedKrr};
use crate::points::{check_dim, Points, Predictor};

pub const SOURCE_PHASE: &str = "source";
pub const OFFSET_PHASE: &str = "offset";

/// Target covariates with residual labels y_T − f̂_S(x_T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub x: Points,
    pub residuals: Vec<f64>,
}

impl PseudoLabelSet {
    pub fn compute<P: Predictor + ?Sized>(target: &Dataset, source_model: &P) -> Result<Self> {
        let fitted = source_model.predict_batch(&target.x)?;
        Ok(Self {
            x: target.x.clone(),
            residuals: target.y.iter().zip(&fitted).map(|(y, f)| y - f).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn to_dataset(&self, target: &Dataset) -> Result<Dataset> {
        target.with_responses(self.residuals.clone())
    }
}

/// Composite predictor f̂_T = f̂_S + f̂_δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatlModel {
    pub source: FittedKrr,
    pub offset: FittedKrr,
    /// Absent for the fixed-λ variant.
    pub source_selection: Option<AdaptiveSelection>,
    pub offset_selection: Option<AdaptiveSelection>,
    pub pseudo_labels: PseudoLabelSet,
}

impl SatlModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.source.predict(x)? + self.offset.predict(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Predictor for SatlModel {
    fn dim(&self) -> usize {
        self.source.points.dim()
    }

    fn predict_batch(&self, points: &Points) -> Result<Vec<f64>> {
        check_dim(Predictor::dim(self), points)?;
        let s = self.source.predict_batch(points)?;
        let d = self.offset.predict_batch(points)?;
        Ok(s.iter().zip(&d).map(|(a, b)| a + b).collect())
    }
}

/// Predicts with the composite model.
pub fn predict_satl(m: &SatlModel, x: &[f64]) -> Result<f64> {
    m.predict(x)
}

/// Kernels for the two phases; both default to the same Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseKernels {
    pub source: KernelSpec,
    pub offset: KernelSpec,
}

impl PhaseKernels {
    pub fn shared(kernel: KernelSpec) -> Self {
        Self {
            source: kernel,
            offset: kernel,
        }
    }
}

fn check_inputs(source: &Dataset, target: &Dataset) -> Result<()> {
    if source.is_empty() {
        return Err(Error::EmptyInput("source dataset"));
    }
    if target.is_empty() {
        return Err(Error::EmptyInput("target dataset"));
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    Ok(())
}

/// Phase 2 on its own, given any phase-1 model (including the zero model).
pub fn fit_offset_phase(
    source_model: FittedKrr,
    source_selection: Option<AdaptiveSelection>,
    target: &Dataset,
    grid_offset: &SmoothnessGrid,
    kernel: &KernelSpec,
    opts: &AdaptOptions,
) -> Result<SatlModel> {
    let phase = |e: Error| e.in_phase(OFFSET_PHASE);
    let pseudo_labels = PseudoLabelSet::compute(target, &source_model).map_err(phase)?;
    let labelled = pseudo_labels.to_dataset(target).map_err(phase)?;
    let (selection, offset) =
        select_adaptive(&labelled, grid_offset, kernel, opts).map_err(phase)?;
    Ok(SatlModel {
        source: source_model,
        offset,
        source_selection,
        offset_selection: Some(selection),
        pseudo_labels,
    })
}

/// Smoothness-adaptive transfer: adapt on the source, then adapt on the
/// target pseudo-labels.
pub fn fit_satl(
    source: &Dataset,
    target: &Dataset,
    grid_source: &SmoothnessGrid,
    grid_offset: &SmoothnessGrid,
    kernels: &PhaseKernels,
    opts_source: &AdaptOptions,
    opts_offset: &AdaptOptions,
) -> Result<SatlModel> {
    check_inputs(source, target)?;
    let (selection, source_model) = select_adaptive(source, grid_source, &kernels.source, opts_source)
        .map_err(|e| e.in_phase(SOURCE_PHASE))?;
    fit_offset_phase(
        source_model,
        Some(selection),
        target,
        grid_offset,
        &kernels.offset,
        opts_offset,
    )
}

/// Non-adaptive offset transfer with supplied regularizers.
pub fn fit_otl_fixed(
    source: &Dataset,
    target: &Dataset,
    kernel: &KernelSpec,
    lambda_source: f64,
    lambda_offset: f64,
) -> Result<SatlModel> {
    check_inputs(source, target)?;
    for l in [lambda_source, lambda_offset] {
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!("λ must be positive, got {l}")));
        }
    }
    let source_model = fit(kernel, source, lambda_source).map_err(|e| e.in_phase(SOURCE_PHASE))?;
    let phase = |e: Error| e.in_phase(OFFSET_PHASE);
    let pseudo_labels = PseudoLabelSet::compute(target, &source_model).map_err(phase)?;
    let labelled = pseudo_labels.to_dataset(target).map_err(phase)?;
    let offset = fit(kernel, &labelled, lambda_offset).map_err(phase)?;
    Ok(SatlModel {
        source: source_model,
        offset,
        source_selection: None,
        offset_selection: None,
        pseudo_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptivity::{build_grid, select_train_validate, GridSpec};
    use crate::datagen::{make_dataset, Domain};
    use crate::evaluation::simpson_l2_error;
    use crate::kernels::GaussianKernel;
    use crate::points::FnPredictor;

    fn gauss() -> KernelSpec {
        GaussianKernel::default().into()
    }

    fn grid(n: usize, values: &[f64]) -> SmoothnessGrid {
        build_grid(
            n,
            1,
            &GridSpec::Explicit {
                values: values.to_vec(),
            },
            1.0,
        )
        .unwrap()
    }

    fn signal() -> FnPredictor<impl Fn(f64) -> f64> {
        FnPredictor(|x: f64| (2.0 * x).sin() + 0.3)
    }

    #[test]
    fn zero_source_reduces_to_target_only() {
        let target = make_dataset(&signal(), 60, 0.2, 11, Domain::Target).unwrap();
        let g = grid(60, &[1.0, 2.0, 3.0]);
        let opts = AdaptOptions::default();
        let m = fit_offset_phase(FittedKrr::zero(gauss(), 1), None, &target, &g, &gauss(), &opts)
            .unwrap();
        assert_eq!(m.pseudo_labels.residuals, target.y);
        let (_, alone) = select_train_validate(&target, &g, &gauss(), &opts).unwrap();
        assert_eq!(m.offset, alone);
        for x in [0.0, 0.37, 1.0] {
            assert_eq!(m.predict(&[x]).unwrap(), alone.predict(&[x]).unwrap());
        }
    }

    #[test]
    fn zero_models_predict_zero() {
        let target = make_dataset(&signal(), 10, 0.0, 1, Domain::Target).unwrap();
        let z = FittedKrr::zero(gauss(), 1);
        let m = SatlModel {
            source: z.clone(),
            offset: z,
            source_selection: None,
            offset_selection: None,
            pseudo_labels: PseudoLabelSet::compute(&target, &FittedKrr::zero(gauss(), 1)).unwrap(),
        };
        assert_eq!(predict_satl(&m, &[0.4]).unwrap(), 0.0);
        assert!(predict_satl(&m, &[0.4, 0.1]).is_err());
    }

    #[test]
    fn exact_source_gives_zero_offset() {
        // the target labels are exactly the phase-1 predictions
        let source = make_dataset(&signal(), 200, 0.0, 2, Domain::Source).unwrap();
        let base = make_dataset(&signal(), 40, 0.0, 3, Domain::Target).unwrap();
        let g = grid(200, &[2.0, 4.0]);
        let (sel, fs) =
            select_train_validate(&source, &g, &gauss(), &AdaptOptions::default()).unwrap();
        let target = base.with_responses(fs.predict_batch(&base.x).unwrap()).unwrap();
        let m = fit_offset_phase(fs, Some(sel), &target, &grid(40, &[1.0, 2.0]), &gauss(), &AdaptOptions::default())
            .unwrap();
        assert!(m.pseudo_labels.residuals.iter().all(|r| r.abs() < 1e-12));
        for x in [0.05, 0.5, 0.95] {
            assert!(m.offset.predict(&[x]).unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_variant_with_huge_lambda_is_near_zero() {
        let source = make_dataset(&signal(), 100, 0.1, 4, Domain::Source).unwrap();
        let target = make_dataset(&signal(), 30, 0.1, 5, Domain::Target).unwrap();
        let m = fit_otl_fixed(&source, &target, &gauss(), 1e9, 1e9).unwrap();
        assert!(m.predict(&[0.5]).unwrap().abs() < 1e-6);
        assert!(fit_otl_fixed(&source, &target, &gauss(), 0.0, 1.0).is_err());
    }

    #[test]
    fn fixed_variant_interpolates_zero_residuals() {
        let source = make_dataset(&signal(), 100, 0.0, 6, Domain::Source).unwrap();
        let base = make_dataset(&signal(), 20, 0.0, 7, Domain::Target).unwrap();
        let fs = fit(&gauss(), &source, 1e-3).unwrap();
        let target = base.with_responses(fs.predict_batch(&base.x).unwrap()).unwrap();
        let m = fit_otl_fixed(&source, &target, &gauss(), 1e-3, 1e-6).unwrap();
        for x in base.x.rows() {
            assert!(m.offset.predict(x).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn singleton_grids_match_fixed_variant() {
        let source = make_dataset(&signal(), 120, 0.2, 8, Domain::Source).unwrap();
        let target = make_dataset(&signal(), 40, 0.2, 9, Domain::Target).unwrap();
        let gs = grid(120, &[2.0]);
        let gd = grid(40, &[3.0]);
        let opts = AdaptOptions {
            refit: true,
            ..Default::default()
        };
        let m = fit_satl(&source, &target, &gs, &gd, &PhaseKernels::shared(gauss()), &opts, &opts)
            .unwrap();
        let l1 = m.source_selection.as_ref().unwrap().lambda;
        let l2 = m.offset_selection.as_ref().unwrap().lambda;
        let f = fit_otl_fixed(&source, &target, &gauss(), l1, l2).unwrap();
        for x in [0.1, 0.5, 0.9] {
            assert!((m.predict(&[x]).unwrap() - f.predict(&[x]).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_offset_does_not_inflate_error() {
        let f = signal();
        let source = make_dataset(&f, 500, 0.0, 10, Domain::Source).unwrap();
        let target = make_dataset(&f, 50, 0.0, 11, Domain::Target).unwrap();
        let m = fit_satl(
            &source,
            &target,
            &grid(500, &[1.0, 2.0, 3.0]),
            &grid(50, &[1.0, 2.0, 3.0]),
            &PhaseKernels::shared(gauss()),
            &AdaptOptions::default(),
            &AdaptOptions::default(),
        )
        .unwrap();
        let e_all = simpson_l2_error(&m, &f, 1025).unwrap().l2;
        let e_src = simpson_l2_error(&m.source, &f, 1025).unwrap().l2;
        assert!(e_all <= e_src + 1e-6, "{e_all} vs {e_src}");
    }

    #[test]
    fn errors_name_their_phase() {
        let source = make_dataset(&signal(), 1, 0.0, 1, Domain::Source).unwrap();
        let target = make_dataset(&signal(), 20, 0.0, 2, Domain::Target).unwrap();
        let g = grid(20, &[1.0]);
        let k = PhaseKernels::shared(gauss());
        let o = AdaptOptions::default();
        match fit_satl(&source, &target, &g, &g, &k, &o, &o) {
            Err(Error::Phase { phase, .. }) => assert_eq!(phase, SOURCE_PHASE),
            other => panic!("expected a phase error, got {other:?}"),
        }
        let source = make_dataset(&signal(), 20, 0.0, 1, Domain::Source).unwrap();
        let target = make_dataset(&signal(), 1, 0.0, 2, Domain::Target).unwrap();
        match fit_satl(&source, &target, &g, &g, &k, &o, &o) {
            Err(Error::Phase { phase, .. }) => assert_eq!(phase, OFFSET_PHASE),
            other => panic!("expected a phase error, got {other:?}"),
        }
    }

    #[test]
    fn json_roundtrip() {
        let source = make_dataset(&signal(), 30, 0.1, 1, Domain::Source).unwrap();
        let target = make_dataset(&signal(), 20, 0.1, 2, Domain::Target).unwrap();
        let g = grid(30, &[1.0, 2.0]);
        let k = PhaseKernels::shared(gauss());
        let o = AdaptOptions::default();
        let m = fit_satl(&source, &target, &g, &g, &k, &o, &o).unwrap();
        let back: SatlModel = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
