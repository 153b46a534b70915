//! Expansion of a config into design points, method series and per-trial
//! cells, plus the seed scheme and the per-cell computation.

use serde::{Deserialize, Serialize};

use super::config::{ConstantMode, ExperimentConfig, Method, Suite};
use crate::adaptivity::{build_grid, select_adaptive, AdaptMethod, AdaptOptions, GridSpec, SmoothnessGrid};
use crate::baselines::{fit_fbe_transfer, fit_misspecified_matern, Truncation};
use crate::datagen::{
    make_dataset, make_transfer_scenario, sample_gp, Dataset, Domain, SampledFunction,
    ScenarioSeeds, TransferScenario,
};
use crate::error::{Error, Result};
use crate::evaluation::{L2Error, Quadrature, SettingKey};
use crate::kernels::{GaussianKernel, KernelSpec, MaternKernel};
use crate::krr::{fit, schedule_lambda, RegSchedule};
use crate::satl::{fit_satl, PhaseKernels};
use crate::seeds::{derive_seed, tag};

/// Sobolev order used for a GP with smoothness ν: the nearest integer when
/// ν is within 0.05 of one (ν = 2.01 is order 2), otherwise ν itself.
pub fn implied_smoothness(nu: f64) -> f64 {
    let r = nu.round();
    if r >= 1.0 && (nu - r).abs() <= 0.05 {
        r
    } else {
        nu
    }
}

/// One combination of the swept design variables. Unused fields are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub n: usize,
    pub n_source: usize,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
}

/// A reported curve: a method, possibly specialised by an imposed ν′ or a
/// fixed constant from a best-over-grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub method: Method,
    pub imposed_nu: Option<f64>,
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub points: Vec<DesignPoint>,
    pub series: Vec<Series>,
    pub trials: usize,
}

impl Plan {
    pub fn new(cfg: &ExperimentConfig) -> Plan {
        let d = &cfg.design;
        let mut points = Vec::new();
        match cfg.suite {
            Suite::TargetOnlyNonadaptive | Suite::TargetOnlyAdaptive | Suite::SaturationDemo => {
                for &nu in &d.nu {
                    for &n in &d.n {
                        points.push(DesignPoint {
                            n,
                            n_source: 0,
                            nu,
                            nu_offset: 0.0,
                            h: 0.0,
                        });
                    }
                }
            }
            Suite::TlFixedTarget | Suite::TlGrowingTarget => {
                for &nu_offset in &d.nu_offset {
                    for &h in &d.h {
                        for &n in &d.n_target {
                            let sources = if cfg.suite == Suite::TlFixedTarget {
                                d.n_source.clone()
                            } else {
                                vec![(n as f64).powf(d.source_exponent).round() as usize]
                            };
                            for n_source in sources {
                                points.push(DesignPoint {
                                    n,
                                    n_source,
                                    nu: d.nu_target,
                                    nu_offset,
                                    h,
                                });
                            }
                        }
                    }
                }
            }
        }

        let grid_constants = match &cfg.constant {
            ConstantMode::BestOverGrid { grid } => {
                let mut g = grid.clone();
                g.sort_by(f64::total_cmp);
                g.dedup();
                Some(g)
            }
            _ => None,
        };
        let mut base = Vec::new();
        for &m in &d.methods {
            if m == Method::MaternImposed {
                for &v in &d.imposed_nu {
                    base.push(Series {
                        label: format!("matern_nu={v}"),
                        method: m,
                        imposed_nu: Some(v),
                        constant: None,
                    });
                }
            } else {
                base.push(Series {
                    label: m.as_str().to_string(),
                    method: m,
                    imposed_nu: None,
                    constant: None,
                });
            }
        }
        let series = match grid_constants {
            None => base,
            Some(g) => base
                .into_iter()
                .flat_map(|s| {
                    g.iter().map(move |&c| Series {
                        label: format!("{}@C={c}", s.label),
                        constant: Some(c),
                        ..s.clone()
                    })
                })
                .collect(),
        };
        Plan {
            points,
            series,
            trials: cfg.trials,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.points.len() * self.trials
    }

    pub fn row_count(&self) -> usize {
        self.cell_count() * self.series.len()
    }

    /// (point, trial) of cell `i`; cells are ordered point-major.
    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.trials, i % self.trials)
    }

    /// (cell, series) of raw row `row_id`.
    pub fn row(&self, row_id: usize) -> (usize, usize) {
        (row_id / self.series.len(), row_id % self.series.len())
    }

    pub fn setting_key(&self, point: usize, series: usize) -> SettingKey {
        let p = &self.points[point];
        SettingKey {
            method: self.series[series].label.clone(),
            n: p.n,
            n_source: p.n_source,
            nu: p.nu,
            nu_offset: p.nu_offset,
            h: p.h,
        }
    }
}

/// Seeds of one trial. Sample seeds do not depend on the sample size, and
/// covariates and noise are drawn sequentially, so the sample at a larger n
/// extends the one at a smaller n. Together with truths shared across n and
/// data shared across methods, curves along n and comparisons between
/// methods use common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub truth: u64,
    pub offset: u64,
    pub data: u64,
    pub source_data: u64,
}

pub fn cell_seeds(cfg: &ExperimentConfig, p: &DesignPoint, trial: usize) -> CellSeeds {
    let m = cfg.master_seed;
    let t = trial as u64;
    if cfg.suite.is_transfer() {
        let (nd, h) = (p.nu_offset.to_bits(), p.h.to_bits());
        CellSeeds {
            truth: derive_seed(m, &[tag::TRUTH, t]),
            offset: derive_seed(m, &[tag::OFFSET, nd, t]),
            data: derive_seed(m, &[tag::DATA, t]),
            source_data: derive_seed(m, &[tag::SOURCE_DATA, nd, h, t]),
        }
    } else {
        let nu = p.nu.to_bits();
        CellSeeds {
            truth: derive_seed(m, &[tag::TRUTH, nu, t]),
            offset: 0,
            data: derive_seed(m, &[tag::DATA, nu, t]),
            source_data: 0,
        }
    }
}

/// Seeds of pilot replicate `k`, drawn from a stream disjoint from every
/// trial so constant selection never sees evaluation data.
pub fn pilot_seeds(cfg: &ExperimentConfig, p: &DesignPoint, k: usize) -> CellSeeds {
    let mut pilot = cfg.clone();
    pilot.master_seed = derive_seed(cfg.master_seed, &[tag::PILOT]);
    cell_seeds(&pilot, p, k)
}

/// The regression problem of one cell.
pub enum Problem {
    Single {
        truth: SampledFunction,
        data: Dataset,
    },
    Transfer {
        scenario: Box<TransferScenario>,
        target: Dataset,
        source: Dataset,
    },
}

impl Problem {
    pub fn generate(cfg: &ExperimentConfig, p: &DesignPoint, seeds: &CellSeeds) -> Result<Problem> {
        if cfg.suite.is_transfer() {
            let scenario = make_transfer_scenario(
                p.nu,
                p.nu_offset,
                p.h,
                cfg.gp.range,
                cfg.gp.grid_size,
                ScenarioSeeds {
                    target: seeds.truth,
                    offset: seeds.offset,
                },
            )?;
            let target = make_dataset(&scenario.target, p.n, cfg.noise_sd, seeds.data, Domain::Target)?;
            let source = make_dataset(
                &scenario.source(),
                p.n_source,
                cfg.noise_sd,
                seeds.source_data,
                Domain::Source,
            )?;
            Ok(Problem::Transfer {
                scenario: Box::new(scenario),
                target,
                source,
            })
        } else {
            let truth = sample_gp(&MaternKernel::new(p.nu, cfg.gp.range)?, cfg.gp.grid_size, seeds.truth)?;
            let data = make_dataset(&truth, p.n, cfg.noise_sd, seeds.data, Domain::Target)?;
            Ok(Problem::Single { truth, data })
        }
    }

    pub fn truth(&self) -> &SampledFunction {
        match self {
            Problem::Single { truth, .. } => truth,
            Problem::Transfer { scenario, .. } => &scenario.target,
        }
    }
}

/// Schedule constants for every (role, series, design slice).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstantTable {
    pub entries: Vec<ConstantEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEntry {
    /// `schedule` for single-domain series; `source`, `offset` or
    /// `target_only` in transfer suites.
    pub role: String,
    pub series: String,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
    /// `cv`, `fixed` or `best_over_grid`.
    pub mode: String,
    /// One shared constant, or one per smoothness candidate in ascending
    /// order (by index for Q-spaced grids).
    pub values: Vec<f64>,
    /// CV record of each value.
    pub selections: Vec<crate::adaptivity::ConstantSelection>,
}

impl ConstantEntry {
    /// Installs the constants on `grid`.
    pub fn apply(&self, grid: SmoothnessGrid) -> Result<SmoothnessGrid> {
        match self.values.as_slice() {
            [c] => Ok(grid.with_constant(*c)),
            v => grid.with_candidate_constants(v),
        }
    }
}

impl ConstantTable {
    pub fn entry(&self, role: &str, series: &str, p: &DesignPoint) -> Result<&ConstantEntry> {
        self.entries
            .iter()
            .find(|e| {
                e.role == role
                    && e.series == series
                    && e.nu == p.nu
                    && e.nu_offset == p.nu_offset
                    && e.h == p.h
            })
            .ok_or_else(|| {
                Error::Contract(format!(
                    "no {role} constant for {series} at nu={} nu_offset={} h={}",
                    p.nu, p.nu_offset, p.h
                ))
            })
    }

    /// The shared constant of a non-adaptive series.
    pub fn lookup(&self, role: &str, series: &str, p: &DesignPoint) -> Result<f64> {
        match self.entry(role, series, p)?.values.as_slice() {
            [c] => Ok(*c),
            v => Err(Error::Contract(format!(
                "{role} constant for {series} has {} values, expected one",
                v.len()
            ))),
        }
    }
}

pub const SCHEDULE: &str = "schedule";
pub const SOURCE: &str = "source";
pub const OFFSET: &str = "offset";
pub const TARGET_ONLY: &str = "target_only";

/// Shared, read-only state of a run.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub plan: &'a Plan,
    pub constants: &'a ConstantTable,
    pub quadrature: Quadrature,
    pub kernels: PhaseKernels,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ExperimentConfig, plan: &'a Plan, constants: &'a ConstantTable) -> Result<Self> {
        let source: KernelSpec = GaussianKernel::new(cfg.kernel.bandwidth)?.into();
        let offset: KernelSpec =
            GaussianKernel::new(cfg.kernel.offset_bandwidth.unwrap_or(cfg.kernel.bandwidth))?.into();
        Ok(Context {
            cfg,
            plan,
            constants,
            quadrature: Quadrature::new(cfg.quadrature_points)?,
            kernels: PhaseKernels { source, offset },
        })
    }

    pub fn adapt_options(&self, method: AdaptMethod) -> AdaptOptions {
        AdaptOptions {
            method,
            quadrature_points: self.cfg.quadrature_points,
            ..self.cfg.adapt.clone()
        }
    }

    pub fn matern_kernel(&self, imposed_nu: f64) -> Result<MaternKernel> {
        MaternKernel::new(imposed_nu, self.cfg.kernel.matern_range.unwrap_or(self.cfg.gp.range))
    }

    fn truncation(&self) -> Truncation {
        Truncation::Cv {
            grid: self.cfg.fbe.truncations.clone(),
            folds: self.cfg.fbe.folds,
        }
    }

    fn constant(&self, role: &str, s: &Series, p: &DesignPoint) -> Result<f64> {
        match s.constant {
            Some(c) => Ok(c),
            None => self.constants.lookup(role, &s.label, p),
        }
    }

    /// Candidate grid for `n` points carrying the series' constants.
    fn grid(&self, role: &str, s: &Series, p: &DesignPoint, n: usize, spec: &GridSpec) -> Result<SmoothnessGrid> {
        let grid = build_grid(n, 1, spec, s.constant.unwrap_or(1.0))?;
        match s.constant {
            Some(_) => Ok(grid),
            None => self.constants.entry(role, &s.label, p)?.apply(grid),
        }
    }
}

/// Result of one method on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub error: L2Error,
    pub constant: Option<f64>,
    /// Selected smoothness, truncation or λ summary, method dependent.
    pub selected: Option<f64>,
}

pub struct CellResult {
    pub cell: usize,
    pub seeds: CellSeeds,
    pub outcomes: Vec<std::result::Result<Outcome, Error>>,
}

/// Runs every series on cell `cell`. Data generation failures are reported
/// against every series of the cell.
pub fn run_cell(ctx: &Context, cell: usize) -> CellResult {
    let (pi, trial) = ctx.plan.cell(cell);
    let p = ctx.plan.points[pi];
    let seeds = cell_seeds(ctx.cfg, &p, trial);
    let outcomes = match Problem::generate(ctx.cfg, &p, &seeds) {
        Ok(problem) => ctx
            .plan
            .series
            .iter()
            .map(|s| run_series(ctx, s, &p, &problem))
            .collect(),
        Err(e) => {
            let tag = e.tag();
            let msg = e.to_string();
            ctx.plan
                .series
                .iter()
                .map(|_| Err(Error::Contract(format!("data generation failed [{tag}]: {msg}"))))
                .collect()
        }
    };
    CellResult {
        cell,
        seeds,
        outcomes,
    }
}

/// Runs series `series` alone on cell `cell`.
pub fn run_single(ctx: &Context, cell: usize, series: usize) -> (CellSeeds, Result<Outcome>) {
    let (pi, trial) = ctx.plan.cell(cell);
    let p = ctx.plan.points[pi];
    let seeds = cell_seeds(ctx.cfg, &p, trial);
    let outcome = Problem::generate(ctx.cfg, &p, &seeds)
        .and_then(|problem| run_series(ctx, &ctx.plan.series[series], &p, &problem));
    (seeds, outcome)
}

fn run_series(ctx: &Context, s: &Series, p: &DesignPoint, problem: &Problem) -> Result<Outcome> {
    let q = &ctx.quadrature;
    let truth = problem.truth();
    let order = implied_smoothness(p.nu);
    match (s.method, problem) {
        (Method::KrrFixed, Problem::Single { data, .. }) => {
            let c = ctx.constant(SCHEDULE, s, p)?;
            let lam = schedule_lambda(&RegSchedule::gaussian(c, order, 1), data.len())?;
            let m = fit(&ctx.kernels.source, data, lam.value)?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: Some(c),
                selected: None,
            })
        }
        (Method::KrrTrainValidate | Method::KrrLepski, Problem::Single { data, .. }) => {
            let method = if s.method == Method::KrrLepski {
                AdaptMethod::Lepski
            } else {
                AdaptMethod::TrainValidate
            };
            let grid = ctx.grid(SCHEDULE, s, p, data.len(), &ctx.cfg.grids.target)?;
            let (sel, m) = select_adaptive(data, &grid, &ctx.kernels.source, &ctx.adapt_options(method))?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: Some(grid.schedule(sel.alpha).constant),
                selected: Some(sel.alpha),
            })
        }
        (Method::MaternImposed, Problem::Single { data, .. }) => {
            let c = ctx.constant(SCHEDULE, s, p)?;
            let nu = s.imposed_nu.ok_or_else(|| Error::Contract("imposed ν missing".into()))?;
            let m = fit_misspecified_matern(data, &ctx.matern_kernel(nu)?, order, c)?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: Some(c),
                selected: None,
            })
        }
        (Method::Satl, Problem::Transfer { target, source, .. }) => {
            let gs = ctx.grid(SOURCE, s, p, source.len(), &ctx.cfg.grids.source)?;
            let gd = ctx.grid(OFFSET, s, p, target.len(), &ctx.cfg.grids.offset)?;
            let opts = ctx.adapt_options(ctx.cfg.adapt.method);
            let m = fit_satl(source, target, &gs, &gd, &ctx.kernels, &opts, &opts)?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: m.offset_selection.as_ref().map(|sel| gd.schedule(sel.alpha).constant),
                selected: m.offset_selection.map(|sel| sel.alpha),
            })
        }
        (Method::TargetOnlyKrr, Problem::Transfer { target, .. }) => {
            let grid = ctx.grid(TARGET_ONLY, s, p, target.len(), &ctx.cfg.grids.target)?;
            let opts = ctx.adapt_options(ctx.cfg.adapt.method);
            let (sel, m) = select_adaptive(target, &grid, &ctx.kernels.source, &opts)?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: Some(grid.schedule(sel.alpha).constant),
                selected: Some(sel.alpha),
            })
        }
        (Method::FbeBspline | Method::FbeFourier, Problem::Transfer { target, source, .. }) => {
            let kind = s.method.basis().expect("FBE method has a basis");
            let t = ctx.truncation();
            let m = fit_fbe_transfer(source, target, kind, &t, &t)?;
            Ok(Outcome {
                error: q.l2_error(&m, truth)?,
                constant: None,
                selected: Some(m.offset.truncation as f64),
            })
        }
        (m, _) => Err(Error::Contract(format!(
            "method {} does not apply to this suite",
            m.as_str()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn implied_smoothness_mapping() {
        assert_eq!(implied_smoothness(2.01), 2.0);
        assert_eq!(implied_smoothness(3.01), 3.0);
        assert_eq!(implied_smoothness(1.5), 1.5);
        assert_eq!(implied_smoothness(0.5), 0.5);
        assert_eq!(implied_smoothness(0.98), 1.0);
    }

    #[test]
    fn plan_sizes() {
        let mut cfg = ExperimentConfig::for_suite(Suite::TlFixedTarget);
        cfg.trials = 3;
        let plan = Plan::new(&cfg);
        assert_eq!(plan.points.len(), 3 * 3 * 6);
        assert_eq!(plan.series.len(), 3);
        assert_eq!(plan.row_count(), 54 * 3 * 3);

        let cfg = ExperimentConfig::for_suite(Suite::TlGrowingTarget);
        let plan = Plan::new(&cfg);
        let sizes: Vec<usize> = plan.points.iter().take(6).map(|p| p.n_source).collect();
        assert_eq!(sizes, vec![354, 1000, 1837, 2828, 5196, 8000]);
    }

    #[test]
    fn best_over_grid_expands_series() {
        let mut cfg = ExperimentConfig::for_suite(Suite::SaturationDemo);
        cfg.constant = ConstantMode::BestOverGrid {
            grid: vec![1.0, 0.5, 1.0],
        };
        let plan = Plan::new(&cfg);
        let labels: Vec<&str> = plan.series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "matern_nu=0.5@C=0.5",
                "matern_nu=0.5@C=1",
                "matern_nu=2.5@C=0.5",
                "matern_nu=2.5@C=1"
            ]
        );
    }

    #[test]
    fn cell_and_row_indexing() {
        let mut cfg = ExperimentConfig::for_suite(Suite::TargetOnlyAdaptive);
        cfg.trials = 4;
        cfg.design.methods = vec![Method::KrrTrainValidate, Method::KrrLepski];
        let plan = Plan::new(&cfg);
        assert_eq!(plan.cell(9), (2, 1));
        assert_eq!(plan.row(19), (9, 1));
        assert_eq!(plan.setting_key(2, 1).method, "krr_lepski");
    }

    #[test]
    fn seeds_share_truth_across_n() {
        let cfg = ExperimentConfig::for_suite(Suite::TargetOnlyNonadaptive);
        let plan = Plan::new(&cfg);
        let a = cell_seeds(&cfg, &plan.points[0], 3);
        let b = cell_seeds(&cfg, &plan.points[1], 3);
        assert_eq!(a, b);
        assert_ne!(cell_seeds(&cfg, &plan.points[0], 4).data, a.data);
        assert_ne!(pilot_seeds(&cfg, &plan.points[0], 3).truth, a.truth);
    }
}
