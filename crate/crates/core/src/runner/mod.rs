//! Config-driven experiment runner: executes a suite, writes the results
//! bundle and derives plot data from it.

pub mod bundle;
pub mod config;
mod constants;
pub mod plan;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bundle::{Bundle, Metadata, RateEntry, RawRow, SummaryRow};
pub use config::{ConstantMode, ExperimentConfig, Method, Suite};
pub use plan::{
    cell_seeds, implied_smoothness, CellSeeds, ConstantEntry, ConstantTable, DesignPoint, Plan,
    Series,
};

use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_trials, fit_rate, theoretical_slope, ErrorReport, RateAbscissa, RateFit,
};
use bundle::{
    BestConstant, ImpliedOrder, Timing, METADATA_FILE, RATES_FILE, RAW_FILE, RAW_HEADER,
    SUMMARY_FILE, SUMMARY_HEADER, TIMING_FILE,
};
use plan::{run_cell, Context};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SATL_WORKERS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `SATL_WORKERS` or the rayon default when absent.
    pub workers: Option<usize>,
    /// Overrides the config's output directory.
    pub output_dir: Option<PathBuf>,
    /// Suppresses the summary table on stdout.
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub rows: usize,
    pub failed_rows: usize,
    pub summary: Vec<SummaryRow>,
    pub rates: Vec<RateEntry>,
    pub constants: ConstantTable,
}

fn worker_count(requested: Option<usize>) -> Result<usize> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let n = requested
        .or(from_env)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Error::Config("worker count must be >= 1".into()));
    }
    Ok(n)
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    crate::linalg::ensure_sequential();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Resolves the schedule constants of `cfg` without running the suite.
pub fn select_constants(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ConstantTable> {
    cfg.validate()?;
    let plan = Plan::new(cfg);
    let empty = ConstantTable::default();
    let ctx = Context::new(cfg, &plan, &empty)?;
    with_pool(worker_count(workers)?, || constants::select_constants(&ctx))?
}

fn constant_mode(cfg: &ExperimentConfig) -> &'static str {
    match cfg.constant {
        ConstantMode::Cv { .. } => "cv",
        ConstantMode::Fixed { .. } => "fixed",
        ConstantMode::BestOverGrid { .. } => "best_over_grid",
    }
}

fn seed_scheme(cfg: &ExperimentConfig) -> Vec<String> {
    let mut v = vec![
        "seed(path) = SplitMix64 chain over [master_seed, tag, ...]; streams are ChaCha8".to_string(),
        "tags: truth=0x74727574 offset=0x6f666673 data=0x64617461 source_data=0x73726364 pilot=0x70696c6f".to_string(),
    ];
    if cfg.suite.is_transfer() {
        v.push("target truth: seed(master, [truth, trial])".into());
        v.push("offset: seed(master, [offset, bits(nu_offset), trial])".into());
        v.push("target sample (raw seed column): seed(master, [data, trial])".into());
        v.push("source sample: seed(master, [source_data, bits(nu_offset), bits(h), trial])".into());
    } else {
        v.push("truth: seed(master, [truth, bits(nu), trial])".into());
        v.push("sample (raw seed column): seed(master, [data, bits(nu), trial])".into());
    }
    v.push("pilot data for constant selection: the same paths under master' = seed(master, [pilot])".into());
    v.push("within a sample: covariates seed(sample, [covariates]), noise seed(sample, [noise]); the first n draws form the size-n sample, so samples are nested in n".into());
    v
}

fn make_row(
    plan: &Plan,
    cell: usize,
    series: usize,
    seeds: &CellSeeds,
    outcome: &Result<plan::Outcome>,
) -> RawRow {
    let (pi, trial) = plan.cell(cell);
    let p = &plan.points[pi];
    let mut row = RawRow {
        row_id: cell * plan.series.len() + series,
        method: plan.series[series].label.clone(),
        n: p.n,
        n_source: p.n_source,
        nu: p.nu,
        nu_offset: p.nu_offset,
        h: p.h,
        trial,
        seed: seeds.data,
        constant: None,
        selected: None,
        l2_error: None,
        squared_error: None,
        status: "ok".into(),
        error_tag: String::new(),
        error: String::new(),
    };
    match outcome {
        Ok(o) => {
            row.constant = o.constant;
            row.selected = o.selected;
            row.l2_error = Some(o.error.l2);
            row.squared_error = Some(o.error.squared);
        }
        Err(e) => {
            row.status = "failed".into();
            row.error_tag = e.tag();
            row.error = e.to_string();
        }
    }
    row
}

fn raw_rows(plan: &Plan, results: &[plan::CellResult]) -> Vec<RawRow> {
    results
        .iter()
        .flat_map(|r| {
            r.outcomes
                .iter()
                .enumerate()
                .map(|(si, o)| make_row(plan, r.cell, si, &r.seeds, o))
        })
        .collect()
}

/// Aggregates raw rows per setting over successful trials, in plan order.
pub fn summarize(plan: &Plan, rows: &[RawRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for (pi, _) in plan.points.iter().enumerate() {
        for si in 0..plan.series.len() {
            let key = plan.setting_key(pi, si);
            let reports: Vec<ErrorReport> = (0..plan.trials)
                .map(|t| &rows[(pi * plan.trials + t) * plan.series.len() + si])
                .filter(|r| r.is_ok())
                .map(|r| ErrorReport {
                    setting: key.clone(),
                    trial: r.trial,
                    seed: r.seed,
                    error: crate::evaluation::L2Error {
                        l2: r.l2_error.unwrap_or(f64::NAN),
                        squared: r.squared_error.unwrap_or(f64::NAN),
                        grid_points: 0,
                    },
                })
                .collect();
            let failures = plan.trials - reports.len();
            let nan = crate::evaluation::Moments {
                mean: f64::NAN,
                sd: f64::NAN,
                se: f64::NAN,
            };
            let (l2, sq) = match aggregate_trials(&reports).first() {
                Some(s) => (s.l2, s.squared),
                None => (nan, nan),
            };
            out.push(SummaryRow {
                method: key.method,
                n: key.n,
                n_source: key.n_source,
                nu: key.nu,
                nu_offset: key.nu_offset,
                h: key.h,
                trials: reports.len(),
                failures,
                mean_l2: l2.mean,
                sd_l2: l2.sd,
                se_l2: l2.se,
                mean_squared: sq.mean,
                sd_squared: sq.sd,
                se_squared: sq.se,
            });
        }
    }
    out
}

fn is_adaptive(m: Method) -> bool {
    matches!(
        m,
        Method::KrrTrainValidate | Method::KrrLepski | Method::Satl | Method::TargetOnlyKrr
    )
}

fn series_theory(s: &Series, nu: f64, nu_offset: f64) -> Option<f64> {
    match s.method {
        Method::KrrFixed | Method::KrrTrainValidate | Method::KrrLepski | Method::TargetOnlyKrr => {
            Some(theoretical_slope(implied_smoothness(nu), 1))
        }
        Method::MaternImposed => {
            // imposed order m₀′ = ν′ + d/2; below m₀/2 the rate saturates at
            // n^{−4m₀′/(4m₀′+d)}, a bound the error cannot beat
            let order = implied_smoothness(nu);
            let imposed = s.imposed_nu? + 0.5;
            Some(if imposed >= order / 2.0 {
                theoretical_slope(order, 1)
            } else {
                -4.0 * imposed / (4.0 * imposed + 1.0)
            })
        }
        Method::Satl => Some(theoretical_slope(implied_smoothness(nu_offset), 1)),
        Method::FbeBspline | Method::FbeFourier => None,
    }
}

/// Log-log rate fits of mean squared error. Curves run over n (target size
/// in transfer suites) except in the fixed-target suite, where they run
/// over the source size for each target size.
pub fn rate_fits(cfg: &ExperimentConfig, plan: &Plan, summary: &[SummaryRow]) -> Vec<RateEntry> {
    type Key = (usize, u64, u64, u64, usize);
    let along_source = cfg.suite == Suite::TlFixedTarget;
    let mut groups: BTreeMap<Key, Vec<&SummaryRow>> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for row in summary {
        let si = plan
            .series
            .iter()
            .position(|s| s.label == row.method)
            .expect("summary rows come from the plan");
        let held = if along_source { row.n } else { 0 };
        let key = (si, row.nu.to_bits(), row.nu_offset.to_bits(), row.h.to_bits(), held);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(row);
    }
    let mut out = Vec::new();
    for key in order {
        let rows = &groups[&key];
        let s = &plan.series[key.0];
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.mean_squared > 0.0 && r.mean_squared.is_finite())
            .map(|r| ((if along_source { r.n_source } else { r.n }) as f64, r.mean_squared))
            .collect();
        let mut abscissas = vec![RateAbscissa::LogN];
        if is_adaptive(s.method) {
            abscissas.push(RateAbscissa::LogNOverLogN);
        }
        let theory = if along_source {
            None
        } else {
            series_theory(s, rows[0].nu, rows[0].nu_offset)
        };
        let fits: Vec<RateFit> = abscissas
            .into_iter()
            .filter_map(|a| fit_rate(&pairs, a).ok())
            .map(|f| match theory {
                Some(t) => f.with_theory(t),
                None => f,
            })
            .collect();
        if fits.is_empty() {
            continue;
        }
        out.push(RateEntry {
            method: s.label.clone(),
            nu: rows[0].nu,
            nu_offset: rows[0].nu_offset,
            h: rows[0].h,
            n_target: key.4,
            x: if along_source { "n_source" } else { "n" }.to_string(),
            fits,
        });
    }
    out
}

/// For best-over-grid runs: the constant minimizing the mean log error of
/// each base method and ν.
pub fn best_over_grid(plan: &Plan, summary: &[SummaryRow]) -> Vec<BestConstant> {
    let mut acc: BTreeMap<(String, u64, u64), (f64, usize)> = BTreeMap::new();
    for r in summary {
        let Some(s) = plan.series.iter().find(|s| s.label == r.method) else {
            continue;
        };
        let Some(c) = s.constant else { continue };
        let base = r.method.split('@').next().unwrap_or_default().to_string();
        let e = acc.entry((base, r.nu.to_bits(), c.to_bits())).or_insert((0.0, 0));
        e.0 += r.mean_squared.ln();
        e.1 += 1;
    }
    let mut best: BTreeMap<(String, u64), BestConstant> = BTreeMap::new();
    for ((base, nu, c), (sum, count)) in acc {
        let mean = sum / count as f64;
        let cand = BestConstant {
            method: base.clone(),
            nu: f64::from_bits(nu),
            constant: f64::from_bits(c),
            mean_log_error: mean,
        };
        match best.get(&(base.clone(), nu)) {
            Some(b) if !(mean < b.mean_log_error) => {}
            _ => {
                best.insert((base, nu), cand);
            }
        }
    }
    best.into_values().collect()
}

/// Executes every (setting × trial × method) cell of `cfg` and writes the
/// bundle. Cell failures are recorded in the raw rows; the run continues.
pub fn run_suite(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let dir = opts
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: set output_dir or pass --out".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let workers = worker_count(opts.workers)?;
    let start = Instant::now();
    let plan = Plan::new(cfg);

    let empty = ConstantTable::default();
    let constants = {
        let ctx = Context::new(cfg, &plan, &empty)?;
        with_pool(workers, || constants::select_constants(&ctx))??
    };
    let constant_seconds = start.elapsed().as_secs_f64();

    let ctx = Context::new(cfg, &plan, &constants)?;
    let results = with_pool(workers, || {
        (0..plan.cell_count())
            .into_par_iter()
            .map(|i| run_cell(&ctx, i))
            .collect::<Vec<_>>()
    })?;
    let rows = raw_rows(&plan, &results);
    let failed_rows = rows.iter().filter(|r| !r.is_ok()).count();
    let summary = summarize(&plan, &rows);
    let rates = rate_fits(cfg, &plan, &summary);

    let mut implied: Vec<f64> = plan.points.iter().flat_map(|p| [p.nu, p.nu_offset]).collect();
    implied.retain(|v| *v > 0.0);
    implied.sort_by(f64::total_cmp);
    implied.dedup();
    let metadata = Metadata {
        format_version: bundle::CSV_VERSION,
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        seed_scheme: seed_scheme(cfg),
        constant_mode: constant_mode(cfg).to_string(),
        constants: constants.clone(),
        best_over_grid: best_over_grid(&plan, &summary),
        implied_smoothness: implied
            .into_iter()
            .map(|nu| ImpliedOrder {
                nu,
                order: implied_smoothness(nu),
            })
            .collect(),
        series: plan.series.clone(),
        design_points: plan.points.len(),
        rows: rows.len(),
        failed_rows,
    };
    bundle::write_csv(&dir.join(RAW_FILE), "raw", &rows, &RAW_HEADER)?;
    bundle::write_csv(&dir.join(SUMMARY_FILE), "summary", &summary, &SUMMARY_HEADER)?;
    bundle::write_json(&dir.join(RATES_FILE), &rates)?;
    bundle::write_json(&dir.join(METADATA_FILE), &metadata)?;
    bundle::write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
            constant_selection_seconds: constant_seconds,
            workers,
        },
    )?;
    if !opts.quiet {
        print_summary(cfg, &summary, &rates);
    }
    Ok(RunReport {
        dir,
        rows: rows.len(),
        failed_rows,
        summary,
        rates,
        constants,
    })
}

fn print_summary(cfg: &ExperimentConfig, summary: &[SummaryRow], rates: &[RateEntry]) {
    println!("suite {}", cfg.suite.as_str());
    println!(
        "{:<24} {:>6} {:>8} {:>6} {:>6} {:>5} {:>12} {:>11} {:>5}",
        "method", "n", "n_source", "nu", "nu_off", "h", "mean_sq", "se_sq", "fail"
    );
    for r in summary {
        println!(
            "{:<24} {:>6} {:>8} {:>6} {:>6} {:>5} {:>12.5e} {:>11.3e} {:>5}",
            r.method, r.n, r.n_source, r.nu, r.nu_offset, r.h, r.mean_squared, r.se_squared, r.failures
        );
    }
    for e in rates {
        for f in &e.fits {
            let theory = f.theoretical_slope.map_or("-".to_string(), |t| format!("{t:.3}"));
            println!(
                "rate {:<24} nu={} nu_offset={} h={} x={} {:?}: slope {:.3} (theory {}) r2 {:.3}",
                e.method, e.nu, e.nu_offset, e.h, e.x, f.abscissa, f.slope, theory, f.r_squared
            );
        }
    }
}

/// Figure inputs derivable from a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// Mean squared error against n, one series per method and ν.
    ErrorDecay,
    /// Transfer curves, one series per method, h and ν_δ.
    TlCurves,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error_decay" => Ok(PlotKind::ErrorDecay),
            "tl_curves" => Ok(PlotKind::TlCurves),
            other => Err(Error::Config(format!(
                "unknown plot kind {other:?} (expected error_decay or tl_curves)"
            ))),
        }
    }
}

impl PlotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::ErrorDecay => "error_decay",
            PlotKind::TlCurves => "tl_curves",
        }
    }
}

fn keep_method(label: &str, filter: Option<&[String]>) -> bool {
    match filter {
        None => true,
        Some(f) => {
            let base = label.split('@').next().unwrap_or(label);
            f.iter().any(|m| m == label || m == base)
        }
    }
}

/// Writes `plot_<kind>.tsv` (or `out`) with columns x, mean, se, series,
/// sorted by series then x. `methods` restricts the series; an empty
/// filter yields a header-only file.
pub fn emit_plot_data(
    bundle_dir: &Path,
    kind: PlotKind,
    methods: Option<&[String]>,
    out: Option<&Path>,
) -> Result<PathBuf> {
    let bundle = Bundle::open(bundle_dir)?;
    let cfg = &bundle.metadata.config;
    if kind == PlotKind::TlCurves && !cfg.suite.is_transfer() {
        return Err(Error::Config(format!(
            "tl_curves needs a transfer suite bundle, got {}",
            cfg.suite.as_str()
        )));
    }
    let multi_target = cfg.design.n_target.len() > 1;
    let mut points: Vec<(String, usize, f64, f64)> = Vec::new();
    for r in bundle.summary()? {
        if !keep_method(&r.method, methods) {
            continue;
        }
        let (label, x) = match (kind, cfg.suite) {
            (PlotKind::TlCurves, Suite::TlFixedTarget) => {
                let mut l = format!("{} h={} nu_offset={}", r.method, r.h, r.nu_offset);
                if multi_target {
                    l.push_str(&format!(" n_target={}", r.n));
                }
                (l, r.n_source)
            }
            (PlotKind::TlCurves, _) => (format!("{} h={} nu_offset={}", r.method, r.h, r.nu_offset), r.n),
            (PlotKind::ErrorDecay, s) if s.is_transfer() => {
                let mut l = format!("{} h={} nu_offset={}", r.method, r.h, r.nu_offset);
                if s == Suite::TlFixedTarget {
                    l.push_str(&format!(" n_source={}", r.n_source));
                }
                (l, r.n)
            }
            (PlotKind::ErrorDecay, _) => (format!("{} nu={}", r.method, r.nu), r.n),
        };
        points.push((label, x, r.mean_squared, r.se_squared));
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| bundle_dir.join(format!("plot_{}.tsv", kind.as_str())));
    let mut text = String::from("x\tmean\tse\tseries\n");
    for (label, x, mean, se) in points {
        text.push_str(&format!("{x}\t{mean}\t{se}\t{label}\n"));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerunReport {
    pub stored: RawRow,
    pub recomputed: RawRow,
    pub identical: bool,
}

/// Recomputes one raw row from the bundle's config echo and stored
/// constants, without touching any other cell.
pub fn rerun_cell(bundle_dir: &Path, row_id: usize) -> Result<RerunReport> {
    let bundle = Bundle::open(bundle_dir)?;
    let cfg = &bundle.metadata.config;
    let plan = Plan::new(cfg);
    if row_id >= plan.row_count() {
        return Err(Error::Bundle(format!(
            "row {row_id} does not exist (bundle has {} rows)",
            plan.row_count()
        )));
    }
    let stored = bundle
        .raw()?
        .into_iter()
        .find(|r| r.row_id == row_id)
        .ok_or_else(|| Error::Bundle(format!("row {row_id} missing from {RAW_FILE}")))?;
    let (cell, series) = plan.row(row_id);
    crate::linalg::ensure_sequential();
    let ctx = Context::new(cfg, &plan, &bundle.metadata.constants)?;
    let (seeds, outcome) = plan::run_single(&ctx, cell, series);
    let recomputed = make_row(&plan, cell, series, &seeds, &outcome);
    Ok(RerunReport {
        identical: recomputed == stored,
        stored,
        recomputed,
    })
}
