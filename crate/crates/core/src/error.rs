use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimators, generators and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(
        "Gram matrix of {n} points is numerically degenerate even with jitter {jitter:e} \
         (point multiset hash {points_hash:016x})"
    )]
    NumericalDegeneracy { n: usize, jitter: f64, points_hash: u64 },

    #[error(
        "Cholesky factorization failed for {n}x{n} system \
         (diagonal range [{diag_min:e}, {diag_max:e}], ridge {ridge:e})"
    )]
    Factorization {
        n: usize,
        diag_min: f64,
        diag_max: f64,
        ridge: f64,
    },

    #[error("query point {x} lies outside the interpolation hull [{lo}, {hi}]")]
    Extrapolation { x: f64, lo: f64, hi: f64 },

    #[error("least-squares design matrix is rank deficient ({rows}x{cols}) after ridge fallback")]
    RankDeficient { rows: usize, cols: usize },

    #[error("{phase} phase failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed results bundle: {0}")]
    Bundle(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag; phase errors read `phase/inner`.
    pub fn tag(&self) -> String {
        let s = match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyInput(_) => "empty_input",
            Error::Contract(_) => "contract",
            Error::NumericalDegeneracy { .. } => "numerical_degeneracy",
            Error::Factorization { .. } => "factorization",
            Error::Extrapolation { .. } => "extrapolation",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Phase { phase, source } => return format!("{phase}/{}", source.tag()),
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Bundle(_) => "bundle",
            Error::Json(_) => "json",
        };
        s.to_string()
    }

    pub(crate) fn in_phase(self, phase: &'static str) -> Error {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
