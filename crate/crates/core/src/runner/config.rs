//! Experiment configuration: a TOML file describing one suite.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptivity::{AdaptMethod, AdaptOptions, GridSpec};
use crate::baselines::{BasisKind, DEFAULT_TRUNCATIONS};
use crate::datagen::{DEFAULT_GP_RANGE, DEFAULT_GRID_SIZE};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_QUADRATURE_POINTS;
use crate::kernels::DEFAULT_BANDWIDTH;

/// Schedule constants tried by CV and by best-over-grid reporting.
pub const DEFAULT_C_GRID: [f64; 10] = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    TargetOnlyNonadaptive,
    TargetOnlyAdaptive,
    TlFixedTarget,
    TlGrowingTarget,
    SaturationDemo,
}

impl Suite {
    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::TargetOnlyNonadaptive => "target_only_nonadaptive",
            Suite::TargetOnlyAdaptive => "target_only_adaptive",
            Suite::TlFixedTarget => "tl_fixed_target",
            Suite::TlGrowingTarget => "tl_growing_target",
            Suite::SaturationDemo => "saturation_demo",
        }
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self, Suite::TlFixedTarget | Suite::TlGrowingTarget)
    }
}

/// Estimators a suite can run on each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Gaussian KRR with the schedule tuned to the true smoothness.
    KrrFixed,
    /// Gaussian KRR adapted by train/validate.
    KrrTrainValidate,
    /// Gaussian KRR adapted by Lepski's rule.
    KrrLepski,
    Satl,
    /// Adaptive Gaussian KRR on the target sample alone.
    TargetOnlyKrr,
    FbeBspline,
    FbeFourier,
    /// Matérn KRR with each imposed ν′ of the saturation design.
    MaternImposed,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::KrrFixed => "krr_fixed",
            Method::KrrTrainValidate => "krr_train_validate",
            Method::KrrLepski => "krr_lepski",
            Method::Satl => "satl",
            Method::TargetOnlyKrr => "target_only_krr",
            Method::FbeBspline => "fbe_bspline",
            Method::FbeFourier => "fbe_fourier",
            Method::MaternImposed => "matern_imposed",
        }
    }

    pub fn basis(&self) -> Option<BasisKind> {
        match self {
            Method::FbeBspline => Some(BasisKind::Bspline),
            Method::FbeFourier => Some(BasisKind::Fourier),
            _ => None,
        }
    }

    fn allowed_in(&self, suite: Suite) -> bool {
        use Method::*;
        match suite {
            Suite::TargetOnlyNonadaptive => matches!(self, KrrFixed),
            Suite::TargetOnlyAdaptive => matches!(self, KrrTrainValidate | KrrLepski),
            Suite::TlFixedTarget | Suite::TlGrowingTarget => {
                matches!(self, Satl | TargetOnlyKrr | FbeBspline | FbeFourier)
            }
            Suite::SaturationDemo => matches!(self, MaternImposed),
        }
    }
}

/// How a schedule constant is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConstantMode {
    /// K-fold CV at the largest sample size, frozen for every n.
    Cv {
        #[serde(default = "default_c_grid")]
        grid: Vec<f64>,
        #[serde(default = "default_folds")]
        folds: usize,
        /// Independent pilot datasets whose CV errors are averaged.
        #[serde(default = "default_pilots")]
        pilots: usize,
        /// Give each smoothness candidate of an adaptive method its own
        /// constant instead of one shared by the whole grid.
        #[serde(default = "default_per_candidate")]
        per_candidate: bool,
    },
    Fixed { value: f64 },
    /// Run every constant as its own series; summaries name the best.
    BestOverGrid {
        #[serde(default = "default_c_grid")]
        grid: Vec<f64>,
    },
}

fn default_c_grid() -> Vec<f64> {
    DEFAULT_C_GRID.to_vec()
}

fn default_folds() -> usize {
    5
}

fn default_pilots() -> usize {
    1
}

fn default_per_candidate() -> bool {
    true
}

impl Default for ConstantMode {
    fn default() -> Self {
        ConstantMode::Cv {
            grid: default_c_grid(),
            folds: default_folds(),
            pilots: default_pilots(),
            per_candidate: default_per_candidate(),
        }
    }
}

impl ConstantMode {
    fn validate(&self, what: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{what}: {msg}")));
        match self {
            ConstantMode::Cv {
                grid,
                folds,
                pilots,
                ..
            } => {
                if grid.is_empty() || grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return bad("C grid must be nonempty and positive".into());
                }
                if *folds < 2 {
                    return bad(format!("CV needs at least 2 folds, got {folds}"));
                }
                if *pilots == 0 {
                    return bad("CV needs at least one pilot dataset".into());
                }
            }
            ConstantMode::Fixed { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return bad(format!("constant must be positive, got {value}"));
                }
            }
            ConstantMode::BestOverGrid { grid } => {
                if grid.is_empty() || grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return bad("C grid must be nonempty and positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Matérn range ρ of the generating processes.
    pub range: f64,
    pub grid_size: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            range: DEFAULT_GP_RANGE,
            grid_size: DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub bandwidth: f64,
    /// Phase-2 bandwidth; phase 1's when absent.
    pub offset_bandwidth: Option<f64>,
    /// Range of the imposed Matérn kernels; the GP range when absent.
    pub matern_range: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth: DEFAULT_BANDWIDTH,
            offset_bandwidth: None,
            matern_range: None,
        }
    }
}

/// Candidate smoothness grids for each estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Target-only adaptive KRR.
    pub target: GridSpec,
    /// SATL phase 1.
    pub source: GridSpec,
    /// SATL phase 2.
    pub offset: GridSpec,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            target: GridSpec::Explicit {
                values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            },
            source: GridSpec::QSpaced { q: 5.0, count: 7 },
            offset: GridSpec::QSpaced { q: 3.5, count: 7 },
        }
    }
}

/// FBE truncation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbeConfig {
    pub truncations: Vec<usize>,
    pub folds: usize,
}

impl Default for FbeConfig {
    fn default() -> Self {
        Self {
            truncations: DEFAULT_TRUNCATIONS.to_vec(),
            folds: 5,
        }
    }
}

/// Sample sizes and function families. Fields irrelevant to the suite are
/// left at their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Design {
    /// Sample sizes of the target-only and saturation suites.
    pub n: Vec<usize>,
    /// Truth ν values of the target-only and saturation suites.
    pub nu: Vec<f64>,
    pub n_target: Vec<usize>,
    /// Source sizes of the fixed-target suite.
    pub n_source: Vec<usize>,
    /// Growing suite: n_S = round(n_T^exponent).
    pub source_exponent: f64,
    pub nu_target: f64,
    pub nu_offset: Vec<f64>,
    pub h: Vec<f64>,
    /// Imposed Matérn ν′ values of the saturation suite.
    pub imposed_nu: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for Design {
    fn default() -> Self {
        Self {
            n: Vec::new(),
            nu: Vec::new(),
            n_target: Vec::new(),
            n_source: Vec::new(),
            source_exponent: 1.5,
            nu_target: 1.01,
            nu_offset: Vec::new(),
            h: Vec::new(),
            imposed_nu: Vec::new(),
            methods: Vec::new(),
        }
    }
}

fn steps(lo: usize, hi: usize, step: usize) -> Vec<usize> {
    (lo..=hi).step_by(step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub design: Design,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub adapt: AdaptOptions,
    /// Constant of the target-only estimators, and of SATL phase 1 unless
    /// `source_constant` is set.
    #[serde(default)]
    pub constant: ConstantMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_constant: Option<ConstantMode>,
    /// Constant of SATL phase 2.
    #[serde(default)]
    pub offset_constant: ConstantMode,
    #[serde(default)]
    pub fbe: FbeConfig,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_trials() -> usize {
    20
}

fn default_noise() -> f64 {
    0.5
}

fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_POINTS
}

impl ExperimentConfig {
    /// A config for `suite` with every field at its default.
    pub fn for_suite(suite: Suite) -> Self {
        let mut cfg = ExperimentConfig {
            suite,
            master_seed: default_seed(),
            trials: default_trials(),
            noise_sd: default_noise(),
            quadrature_points: default_quadrature(),
            output_dir: None,
            design: Design::default(),
            gp: GpConfig::default(),
            kernel: KernelConfig::default(),
            grids: GridConfig::default(),
            adapt: AdaptOptions::default(),
            constant: ConstantMode::default(),
            source_constant: None,
            offset_constant: ConstantMode::default(),
            fbe: FbeConfig::default(),
        };
        cfg.fill_defaults();
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills empty design lists with the suite's desk-scale defaults.
    fn fill_defaults(&mut self) {
        let d = &mut self.design;
        match self.suite {
            Suite::TargetOnlyNonadaptive | Suite::TargetOnlyAdaptive => {
                if d.n.is_empty() {
                    d.n = steps(500, 2000, 250);
                }
                if d.nu.is_empty() {
                    d.nu = vec![2.01, 3.01];
                }
            }
            Suite::SaturationDemo => {
                if d.n.is_empty() {
                    d.n = steps(500, 3000, 500);
                }
                if d.nu.is_empty() {
                    d.nu = vec![3.01];
                }
                if d.imposed_nu.is_empty() {
                    d.imposed_nu = vec![0.5, 2.5];
                }
            }
            Suite::TlFixedTarget => {
                if d.n_target.is_empty() {
                    d.n_target = vec![50];
                }
                if d.n_source.is_empty() {
                    d.n_source = vec![100, 250, 500, 1000, 1500, 2000];
                }
            }
            Suite::TlGrowingTarget => {
                if d.n_target.is_empty() {
                    d.n_target = vec![50, 100, 150, 200, 300, 400];
                }
            }
        }
        if self.suite.is_transfer() {
            if d.nu_offset.is_empty() {
                d.nu_offset = vec![2.01, 3.01, 4.01];
            }
            if d.h.is_empty() {
                d.h = vec![0.5, 1.0, 2.0];
            }
        }
        if d.methods.is_empty() {
            d.methods = match self.suite {
                Suite::TargetOnlyNonadaptive => vec![Method::KrrFixed],
                Suite::TargetOnlyAdaptive => vec![Method::KrrTrainValidate],
                Suite::TlFixedTarget | Suite::TlGrowingTarget => {
                    vec![Method::Satl, Method::TargetOnlyKrr, Method::FbeBspline]
                }
                Suite::SaturationDemo => vec![Method::MaternImposed],
            };
        }
    }

    /// The `--paper-scale` variant: 100 trials and, for the single-domain
    /// suites, n from 1000 to 3000 in steps of 100.
    /// Constant mode of SATL phase 1.
    pub fn source_mode(&self) -> &ConstantMode {
        self.source_constant.as_ref().unwrap_or(&self.constant)
    }

    pub fn paper_scale(mut self) -> Self {
        self.trials = 100;
        if matches!(
            self.suite,
            Suite::TargetOnlyNonadaptive | Suite::TargetOnlyAdaptive | Suite::SaturationDemo
        ) {
            self.design.n = steps(1000, 3000, 100);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be >= 0, got {}", self.noise_sd));
        }
        if self.quadrature_points < 3 || self.quadrature_points % 2 == 0 {
            return bad("quadrature_points must be odd and >= 3".into());
        }
        if !(self.gp.range > 0.0) || self.gp.grid_size < 4 {
            return bad("gp.range must be positive and gp.grid_size >= 4".into());
        }
        let positive = |v: Option<f64>| v.is_none_or(|b| b > 0.0 && b.is_finite());
        if !positive(Some(self.kernel.bandwidth))
            || !positive(self.kernel.offset_bandwidth)
            || !positive(self.kernel.matern_range)
        {
            return bad("kernel bandwidths and ranges must be positive".into());
        }
        if !(self.adapt.split_fraction > 0.0 && self.adapt.split_fraction < 1.0) {
            return bad("adapt.split_fraction must lie in (0, 1)".into());
        }
        if !(self.adapt.lepski_c0 > 0.0) {
            return bad("adapt.lepski_c0 must be positive".into());
        }
        let d = &self.design;
        if d.methods.is_empty() {
            return bad("design.methods must be nonempty".into());
        }
        let mut seen = d.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != d.methods.len() {
            return bad("design.methods lists a method twice".into());
        }
        for m in &d.methods {
            if !m.allowed_in(self.suite) {
                return bad(format!(
                    "method {} is not available in suite {}",
                    m.as_str(),
                    self.suite.as_str()
                ));
            }
        }
        let positive_nus = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite());
        match self.suite {
            Suite::TargetOnlyNonadaptive | Suite::TargetOnlyAdaptive | Suite::SaturationDemo => {
                if d.n.is_empty() || d.n.iter().any(|&n| n < 4) {
                    return bad("design.n must be nonempty with every n >= 4".into());
                }
                if !positive_nus(&d.nu) {
                    return bad("design.nu must be nonempty and positive".into());
                }
                if self.suite == Suite::SaturationDemo && !positive_nus(&d.imposed_nu) {
                    return bad("design.imposed_nu must be nonempty and positive".into());
                }
            }
            Suite::TlFixedTarget | Suite::TlGrowingTarget => {
                if d.n_target.is_empty() || d.n_target.iter().any(|&n| n < 4) {
                    return bad("design.n_target must be nonempty with every n >= 4".into());
                }
                if self.suite == Suite::TlFixedTarget
                    && (d.n_source.is_empty() || d.n_source.iter().any(|&n| n < 4))
                {
                    return bad("design.n_source must be nonempty with every n >= 4".into());
                }
                if self.suite == Suite::TlGrowingTarget && !(d.source_exponent > 0.0) {
                    return bad("design.source_exponent must be positive".into());
                }
                if !positive_nus(&d.nu_offset) || !(d.nu_target > 0.0) {
                    return bad("design.nu_target and design.nu_offset must be positive".into());
                }
                if d.h.is_empty() || d.h.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
                    return bad("design.h must be nonempty and >= 0".into());
                }
                if [&self.constant, &self.offset_constant, self.source_mode()]
                    .iter()
                    .any(|m| matches!(m, ConstantMode::BestOverGrid { .. }))
                {
                    return bad("best_over_grid constants are only supported by single-domain suites".into());
                }
            }
        }
        self.constant.validate("constant")?;
        self.offset_constant.validate("offset_constant")?;
        if let Some(m) = &self.source_constant {
            m.validate("source_constant")?;
        }
        if self.fbe.truncations.is_empty() || self.fbe.folds < 2 {
            return bad("fbe.truncations must be nonempty and fbe.folds >= 2".into());
        }
        if self.adapt.method == AdaptMethod::Lepski && self.suite == Suite::TargetOnlyAdaptive {
            return bad("choose Lepski for target-only runs via the krr_lepski method".into());
        }
        Ok(())
    }
}
