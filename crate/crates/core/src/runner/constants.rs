//! Selection of the schedule constants C before the main run.

use super::config::{ConstantMode, ExperimentConfig, Method, Suite};
use super::plan::{
    implied_smoothness, pilot_seeds, ConstantEntry, ConstantTable, Context, DesignPoint, Plan,
    Problem, OFFSET, SCHEDULE, SOURCE, TARGET_ONLY,
};
use crate::adaptivity::{
    build_grid, select_adaptive, select_constant_cv_pooled, AdaptMethod, ConstantSelection, GridSpec,
};
use crate::baselines::fit_misspecified_matern;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::krr::{fit, schedule_lambda, RegSchedule};
use crate::satl::{fit_offset_phase, PseudoLabelSet};

/// Largest-n design point of each slice that needs its own constants.
fn slices(cfg: &ExperimentConfig, plan: &Plan) -> Vec<DesignPoint> {
    let mut out: Vec<DesignPoint> = Vec::new();
    for p in &plan.points {
        match out
            .iter_mut()
            .find(|q| q.nu == p.nu && q.nu_offset == p.nu_offset && q.h == p.h)
        {
            Some(q) => {
                q.n = q.n.max(p.n);
                q.n_source = q.n_source.max(p.n_source);
            }
            None => out.push(*p),
        }
    }
    if cfg.suite == Suite::TlGrowingTarget {
        // the source size follows the largest target size
        for q in &mut out {
            q.n_source = (q.n as f64).powf(cfg.design.source_exponent).round() as usize;
        }
    }
    out
}

fn entry(role: &str, series: &str, p: &DesignPoint, mode: &str, values: Vec<f64>) -> ConstantEntry {
    ConstantEntry {
        role: role.to_string(),
        series: series.to_string(),
        nu: p.nu,
        nu_offset: p.nu_offset,
        h: p.h,
        mode: mode.to_string(),
        values,
        selections: Vec::new(),
    }
}

fn cv_entry(role: &str, series: &str, p: &DesignPoint, selections: Vec<ConstantSelection>) -> ConstantEntry {
    ConstantEntry {
        selections: selections.clone(),
        ..entry(role, series, p, "cv", selections.iter().map(|s| s.chosen).collect())
    }
}

/// Pilot problems as (source, target) pairs; single-domain pilots carry
/// their only dataset in the second slot.
type Pilot = (Option<Dataset>, Dataset);

fn pilot_count(mode: &ConstantMode) -> usize {
    match mode {
        ConstantMode::Cv { pilots, .. } => *pilots,
        _ => 0,
    }
}

/// Resolves every constant the plan needs: fixed values are copied, CV
/// values are chosen on pilot data at the largest sample size of each slice
/// and then frozen for all n.
pub fn select_constants(ctx: &Context) -> Result<ConstantTable> {
    let cfg = ctx.cfg;
    let plan = ctx.plan;
    let mut table = ConstantTable::default();
    if matches!(cfg.constant, ConstantMode::BestOverGrid { .. }) {
        return Ok(table);
    }
    let count = [&cfg.constant, &cfg.offset_constant, cfg.source_mode()]
        .into_iter()
        .map(pilot_count)
        .max()
        .unwrap_or(0);
    for p in slices(cfg, plan) {
        let pilots = pilot_problems(cfg, &p, count)?;
        let targets = |mode: &ConstantMode| -> Vec<Dataset> {
            pilots[..pilot_count(mode)].iter().map(|(_, t)| t.clone()).collect()
        };
        for s in &plan.series {
            match s.method {
                Method::KrrFixed | Method::MaternImposed => {
                    let e = match &cfg.constant {
                        ConstantMode::Fixed { value } => entry(SCHEDULE, &s.label, &p, "fixed", vec![*value]),
                        ConstantMode::Cv { grid, folds, .. } => {
                            let data = targets(&cfg.constant);
                            let sel = cv_nonadaptive(ctx, s.method, s.imposed_nu, &p, &data, grid, *folds)?;
                            cv_entry(SCHEDULE, &s.label, &p, vec![sel])
                        }
                        ConstantMode::BestOverGrid { .. } => unreachable!(),
                    };
                    table.entries.push(e);
                }
                Method::KrrTrainValidate | Method::KrrLepski => {
                    let am = if s.method == Method::KrrLepski {
                        AdaptMethod::Lepski
                    } else {
                        AdaptMethod::TrainValidate
                    };
                    let data = targets(&cfg.constant);
                    let e = adaptive_entry(ctx, SCHEDULE, &s.label, &p, &cfg.constant, &data, &cfg.grids.target, am)?;
                    table.entries.push(e);
                }
                Method::Satl => {
                    let mode = cfg.source_mode();
                    let sources: Vec<Dataset> = pilots[..pilot_count(mode)]
                        .iter()
                        .filter_map(|(s, _)| s.clone())
                        .collect();
                    let se = adaptive_entry(ctx, SOURCE, &s.label, &p, mode, &sources, &cfg.grids.source, cfg.adapt.method)
                        .map_err(|e| e.in_phase(crate::satl::SOURCE_PHASE))?;
                    let oe = offset_entry(ctx, &s.label, &p, &pilots, &se)
                        .map_err(|e| e.in_phase(crate::satl::OFFSET_PHASE))?;
                    table.entries.push(se);
                    table.entries.push(oe);
                }
                Method::TargetOnlyKrr => {
                    let data = targets(&cfg.constant);
                    let e = adaptive_entry(
                        ctx,
                        TARGET_ONLY,
                        &s.label,
                        &p,
                        &cfg.constant,
                        &data,
                        &cfg.grids.target,
                        cfg.adapt.method,
                    )?;
                    table.entries.push(e);
                }
                Method::FbeBspline | Method::FbeFourier => {}
            }
        }
    }
    Ok(table)
}

fn pilot_problems(cfg: &ExperimentConfig, p: &DesignPoint, count: usize) -> Result<Vec<Pilot>> {
    (0..count)
        .map(|k| {
            Ok(match Problem::generate(cfg, p, &pilot_seeds(cfg, p, k))? {
                Problem::Single { data, .. } => (None, data),
                Problem::Transfer { target, source, .. } => (Some(source), target),
            })
        })
        .collect()
}

/// Per-candidate CV scores each candidate's own non-adaptive estimator;
/// shared CV scores the whole adaptive procedure.
#[allow(clippy::too_many_arguments)]
fn adaptive_entry(
    ctx: &Context,
    role: &str,
    label: &str,
    p: &DesignPoint,
    mode: &ConstantMode,
    data: &[Dataset],
    spec: &GridSpec,
    method: AdaptMethod,
) -> Result<ConstantEntry> {
    let kernel = &ctx.kernels.source;
    match mode {
        ConstantMode::Fixed { value } => Ok(entry(role, label, p, "fixed", vec![*value])),
        ConstantMode::Cv {
            grid,
            folds,
            per_candidate: true,
            ..
        } => {
            let sels = per_candidate_cv(data, spec, kernel, grid, *folds)?;
            Ok(cv_entry(role, label, p, sels))
        }
        ConstantMode::Cv { grid, folds, .. } => {
            let opts = ctx.adapt_options(method);
            let sel = select_constant_cv_pooled(data, grid, *folds, |_, train, c| {
                let g = build_grid(train.len(), 1, spec, c)?;
                Ok(select_adaptive(train, &g, kernel, &opts)?.1)
            })?;
            Ok(cv_entry(role, label, p, vec![sel]))
        }
        ConstantMode::BestOverGrid { .. } => Err(Error::Config(
            "best_over_grid is not available for adaptive transfer phases".into(),
        )),
    }
}

/// One CV selection per candidate of the grid at the pilot size.
fn per_candidate_cv(
    data: &[Dataset],
    spec: &GridSpec,
    kernel: &KernelSpec,
    grid: &[f64],
    folds: usize,
) -> Result<Vec<ConstantSelection>> {
    let n = data.first().ok_or(Error::EmptyInput("CV datasets"))?.len();
    let alphas = build_grid(n, 1, spec, 1.0)?.candidates().to_vec();
    alphas
        .iter()
        .map(|&a| {
            select_constant_cv_pooled(data, grid, folds, |_, train, c| {
                let lam = schedule_lambda(&RegSchedule::gaussian(c, a, 1), train.len())?;
                fit(kernel, train, lam.value)
            })
        })
        .collect()
}

/// Phase-2 constants, scored on pilot targets relabelled by phase-1 fits
/// that use the already chosen source constants.
fn offset_entry(
    ctx: &Context,
    label: &str,
    p: &DesignPoint,
    pilots: &[Pilot],
    source: &ConstantEntry,
) -> Result<ConstantEntry> {
    let cfg = ctx.cfg;
    let (grid, folds, per_candidate) = match &cfg.offset_constant {
        ConstantMode::Fixed { value } => return Ok(entry(OFFSET, label, p, "fixed", vec![*value])),
        ConstantMode::Cv {
            grid,
            folds,
            per_candidate,
            ..
        } => (grid, *folds, *per_candidate),
        ConstantMode::BestOverGrid { .. } => unreachable!("rejected by validation"),
    };
    let opts = ctx.adapt_options(cfg.adapt.method);
    let used = &pilots[..pilot_count(&cfg.offset_constant)];
    let source_models = used
        .iter()
        .map(|(s, _)| {
            let s = s.as_ref().ok_or_else(|| Error::Contract("transfer pilot without source".into()))?;
            let g = source.apply(build_grid(s.len(), 1, &cfg.grids.source, 1.0)?)?;
            select_adaptive(s, &g, &ctx.kernels.source, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Dataset> = used.iter().map(|(_, t)| t.clone()).collect();
    let sels = if per_candidate {
        let residuals = targets
            .iter()
            .zip(&source_models)
            .map(|(t, (_, m))| PseudoLabelSet::compute(t, m)?.to_dataset(t))
            .collect::<Result<Vec<_>>>()?;
        per_candidate_cv(&residuals, &cfg.grids.offset, &ctx.kernels.offset, grid, folds)?
    } else {
        vec![select_constant_cv_pooled(&targets, grid, folds, |k, train, c| {
            let g = build_grid(train.len(), 1, &cfg.grids.offset, c)?;
            let (sel, model) = source_models[k].clone();
            fit_offset_phase(model, Some(sel), train, &g, &ctx.kernels.offset, &opts)
        })?]
    };
    Ok(cv_entry(OFFSET, label, p, sels))
}

fn cv_nonadaptive(
    ctx: &Context,
    method: Method,
    imposed_nu: Option<f64>,
    p: &DesignPoint,
    data: &[Dataset],
    grid: &[f64],
    folds: usize,
) -> Result<ConstantSelection> {
    let order = implied_smoothness(p.nu);
    match method {
        Method::KrrFixed => select_constant_cv_pooled(data, grid, folds, |_, train, c| {
            let lam = schedule_lambda(&RegSchedule::gaussian(c, order, 1), train.len())?;
            fit(&ctx.kernels.source, train, lam.value)
        }),
        Method::MaternImposed => {
            let nu = imposed_nu.ok_or_else(|| Error::Contract("imposed ν missing".into()))?;
            let mk = ctx.matern_kernel(nu)?;
            select_constant_cv_pooled(data, grid, folds, |_, train, c| {
                fit_misspecified_matern(train, &mk, order, c)
            })
        }
        m => Err(Error::Contract(format!("{} is not a non-adaptive method", m.as_str()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_constants_cover_every_series() {
        let mut cfg = ExperimentConfig::for_suite(Suite::TlFixedTarget);
        cfg.constant = ConstantMode::Fixed { value: 0.7 };
        cfg.offset_constant = ConstantMode::Fixed { value: 0.3 };
        let plan = Plan::new(&cfg);
        let empty = ConstantTable::default();
        let ctx = Context::new(&cfg, &plan, &empty).unwrap();
        let table = select_constants(&ctx).unwrap();
        // 9 slices, satl (source + offset) and target-only
        assert_eq!(table.entries.len(), 9 * 3);
        let p = plan.points[0];
        assert_eq!(table.lookup(SOURCE, "satl", &p).unwrap(), 0.7);
        assert_eq!(table.lookup(OFFSET, "satl", &p).unwrap(), 0.3);
        assert_eq!(table.lookup(TARGET_ONLY, "target_only_krr", &p).unwrap(), 0.7);
        assert!(table.lookup(SOURCE, "fbe_bspline", &p).is_err());
    }

    #[test]
    fn slices_take_largest_sizes() {
        let cfg = ExperimentConfig::for_suite(Suite::TlGrowingTarget);
        let plan = Plan::new(&cfg);
        let s = slices(&cfg, &plan);
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(|p| p.n == 400 && p.n_source == 8000));
    }

    #[test]
    fn cv_single_grid_point() {
        let mut cfg = ExperimentConfig::for_suite(Suite::TargetOnlyNonadaptive);
        cfg.design.n = vec![40];
        cfg.design.nu = vec![2.01];
        cfg.constant = ConstantMode::Cv {
            grid: vec![0.5],
            folds: 4,
            pilots: 2,
            per_candidate: true,
        };
        let plan = Plan::new(&cfg);
        let empty = ConstantTable::default();
        let ctx = Context::new(&cfg, &plan, &empty).unwrap();
        let table = select_constants(&ctx).unwrap();
        assert_eq!(table.entries.len(), 1);
        let e = &table.entries[0];
        assert_eq!(e.values, vec![0.5]);
        assert_eq!(e.selections[0].datasets, 2);
    }
}
