//! On-disk results bundle: raw and summary CSVs, rate fits, metadata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::plan::{ConstantTable, Series};
use crate::error::{Error, Result};
use crate::evaluation::RateFit;

pub const RAW_FILE: &str = "raw.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RATES_FILE: &str = "rates.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const TIMING_FILE: &str = "timing.json";

/// Version of the CSV column layout, written as a leading comment line.
pub const CSV_VERSION: u32 = 1;

/// One (setting, trial, method) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub row_id: usize,
    pub method: String,
    pub n: usize,
    pub n_source: usize,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
    pub trial: usize,
    /// Seed of the target sample; the other streams derive from the same
    /// master seed and are listed in the metadata.
    pub seed: u64,
    pub constant: Option<f64>,
    pub selected: Option<f64>,
    pub l2_error: Option<f64>,
    pub squared_error: Option<f64>,
    /// `ok` or `failed`.
    pub status: String,
    pub error_tag: String,
    pub error: String,
}

impl RawRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Trial aggregate of one setting and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub n_source: usize,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_l2: f64,
    pub sd_l2: f64,
    pub se_l2: f64,
    pub mean_squared: f64,
    pub sd_squared: f64,
    pub se_squared: f64,
}

/// Log-log fit of one curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub method: String,
    pub nu: f64,
    pub nu_offset: f64,
    pub h: f64,
    /// Target size held fixed along a source-size curve, otherwise 0.
    pub n_target: usize,
    /// `n` or `n_source`, the variable on the abscissa.
    pub x: String,
    pub fits: Vec<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedOrder {
    pub nu: f64,
    pub order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestConstant {
    pub method: String,
    pub nu: f64,
    pub constant: f64,
    /// Mean over n of log mean squared error; the selection criterion.
    pub mean_log_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub package: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seed_scheme: Vec<String>,
    /// `cv`, `fixed` or `best_over_grid`.
    pub constant_mode: String,
    pub constants: ConstantTable,
    pub best_over_grid: Vec<BestConstant>,
    pub implied_smoothness: Vec<ImpliedOrder>,
    pub series: Vec<Series>,
    pub design_points: usize,
    pub rows: usize,
    pub failed_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub constant_selection_seconds: f64,
    pub workers: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `rows` as CSV after a `# <kind> v<version>` comment line.
pub fn write_csv<T: Serialize>(path: &Path, kind: &str, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# satl {kind} v{CSV_VERSION}").map_err(|e| Error::io(path, e))?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| Error::Bundle(format!("{}: {e}", path.display()));
    csv.write_record(header).map_err(io)?;
    for r in rows {
        csv.serialize(r).map_err(io)?;
    }
    csv.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))
}

pub const RAW_HEADER: [&str; 16] = [
    "row_id",
    "method",
    "n",
    "n_source",
    "nu",
    "nu_offset",
    "h",
    "trial",
    "seed",
    "constant",
    "selected",
    "l2_error",
    "squared_error",
    "status",
    "error_tag",
    "error",
];

pub const SUMMARY_HEADER: [&str; 14] = [
    "method",
    "n",
    "n_source",
    "nu",
    "nu_offset",
    "h",
    "trials",
    "failures",
    "mean_l2",
    "sd_l2",
    "se_l2",
    "mean_squared",
    "sd_squared",
    "se_squared",
];

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))
}

/// A bundle directory read back from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub metadata: Metadata,
}

impl Bundle {
    pub fn open(dir: &Path) -> Result<Bundle> {
        Ok(Bundle {
            dir: dir.to_path_buf(),
            metadata: read_json(&dir.join(METADATA_FILE))?,
        })
    }

    pub fn raw(&self) -> Result<Vec<RawRow>> {
        read_csv(&self.dir.join(RAW_FILE))
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        read_csv(&self.dir.join(SUMMARY_FILE))
    }

    pub fn rates(&self) -> Result<Vec<RateEntry>> {
        read_json(&self.dir.join(RATES_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        let rows = vec![
            RawRow {
                row_id: 0,
                method: "krr_fixed".into(),
                n: 10,
                n_source: 0,
                nu: 2.01,
                nu_offset: 0.0,
                h: 0.0,
                trial: 0,
                seed: u64::MAX,
                constant: Some(0.1 + 0.2),
                selected: None,
                l2_error: Some(1.0 / 3.0),
                squared_error: Some(1.0 / 9.0),
                status: "ok".into(),
                error_tag: String::new(),
                error: String::new(),
            },
            RawRow {
                row_id: 1,
                method: "matern_nu=0.5".into(),
                status: "failed".into(),
                error_tag: "offset/rank_deficient".into(),
                error: "a, \"quoted\" message".into(),
                l2_error: None,
                squared_error: None,
                ..Default::default()
            },
        ];
        write_csv(&path, "raw", &rows, &RAW_HEADER).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# satl raw v1\nrow_id,method,"));
        let back: Vec<RawRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
    }

    impl Default for RawRow {
        fn default() -> Self {
            RawRow {
                row_id: 0,
                method: String::new(),
                n: 0,
                n_source: 0,
                nu: 0.0,
                nu_offset: 0.0,
                h: 0.0,
                trial: 0,
                seed: 0,
                constant: None,
                selected: None,
                l2_error: None,
                squared_error: None,
                status: String::new(),
                error_tag: String::new(),
                error: String::new(),
            }
        }
    }
}
