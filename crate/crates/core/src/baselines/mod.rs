//! Competing estimators: target-only adaptive KRR, KRR with an imposed
//! (possibly misspecified) Matérn kernel, and finite basis expansions.

mod fbe;

pub use fbe::{
    fit_fbe, fit_fbe_offset, fit_fbe_target_only, fit_fbe_transfer, fourier_basis,
    select_truncation_cv, BasisKind, FbeModel, FbeTransferModel, Truncation, TruncationSelection,
    DEFAULT_TRUNCATIONS, RIDGE_FALLBACK,
};

use crate::adaptivity::{select_adaptive, AdaptOptions, AdaptiveSelection, SmoothnessGrid};
use crate::datagen::Dataset;
use crate::error::Result;
use crate::kernels::{KernelSpec, MaternKernel};
use crate::krr::{fit, schedule_lambda, FittedKrr, RegSchedule};

/// Adaptive Gaussian KRR on the target sample alone.
pub fn fit_target_only(
    target: &Dataset,
    grid: &SmoothnessGrid,
    kernel: &KernelSpec,
    opts: &AdaptOptions,
) -> Result<(AdaptiveSelection, FittedKrr)> {
    select_adaptive(target, grid, kernel, opts)
}

/// KRR with a Matérn(ν′) kernel and λ = C·n^{−2m₀′/(2m₀+d)}, where m₀ is
/// the true order and m₀′ = ν′ + d/2 the imposed one.
pub fn fit_misspecified_matern(
    data: &Dataset,
    kernel: &MaternKernel,
    true_order: f64,
    constant: f64,
) -> Result<FittedKrr> {
    let d = data.dim();
    let schedule = RegSchedule::matern(constant, true_order, kernel.rkhs_order(d), d);
    let lambda = schedule_lambda(&schedule, data.len())?;
    fit(&KernelSpec::from(*kernel), data, lambda.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, Domain};
    use crate::points::FnPredictor;

    #[test]
    fn well_specified_exponent() {
        let d = make_dataset(&FnPredictor(|x: f64| x.sin()), 100, 0.1, 1, Domain::Target).unwrap();
        // ν′ = 1.5 → m₀′ = 2 = m₀, exponent −0.8
        let k = MaternKernel::new(1.5, 0.5).unwrap();
        let m = fit_misspecified_matern(&d, &k, 2.0, 0.7).unwrap();
        assert!((m.lambda - 0.7 * 100f64.powf(-0.8)).abs() < 1e-15);
    }

    #[test]
    fn single_point_uses_constant() {
        let d = make_dataset(&FnPredictor(|x: f64| x), 1, 0.0, 1, Domain::Target).unwrap();
        let k = MaternKernel::new(0.5, 0.5).unwrap();
        assert_eq!(fit_misspecified_matern(&d, &k, 3.0, 0.4).unwrap().lambda, 0.4);
    }
}
