//! Smoothness-adaptive transfer learning with Gaussian-kernel ridge
//! regression, plus the simulation harness used to study its rates.

pub mod adaptivity;
pub mod baselines;
pub mod bessel;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod kernels;
pub mod krr;
pub mod linalg;
pub mod points;
pub mod runner;
pub mod satl;
pub mod seeds;

pub use error::{Error, Result};
pub use points::{FnPredictor, Points, Predictor};
