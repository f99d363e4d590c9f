//! Average treatment effect (ATE) estimation under selection bias.
//!
//! The library covers the full workflow for studying selection-biased
//! observational data on a synthetic benchmark:
//!
//! - [`datagen`]: structural-equation population generator (several noise
//!   families and outcome functional forms) with a Monte Carlo oracle ATE.
//! - [`selection`]: two-stage selection mechanism (deterministic truncation
//!   followed by sigmoid probabilistic selection).
//! - [`propensity`]: propensity estimation with isotonic calibration and
//!   overlap trimming.
//! - [`estimators`]: IPW and polynomial baselines, Gaussian-mixture MLE and
//!   score-matching estimators with an optional learned selection weight
//!   `beta(x, y, t)`, plus Heckman and AIPW reference estimators.
//! - [`identifiability`]: executable checkers for the distributional
//!   identifiability condition (density-ratio witnesses, polynomial-exponent
//!   comparison).
//! - [`dag`]: causal-graph criteria (d-separation, selection-backdoor,
//!   generalized adjustment, S-id).
//! - [`harness`]: experiment configuration, orchestration and reporting.
//!
//! The `selate` binary exposes the harness as a CLI (`gen`, `run`, `sweep`,
//! `idcheck`, `dagcheck`).

pub mod dag;
pub mod data;
pub mod datagen;
pub mod estimators;
pub mod harness;
pub mod identifiability;
pub mod nnet;
pub mod numeric;
pub mod propensity;
pub mod rng;
pub mod selection;

pub use data::{AteEstimate, Dataset, Method, Sample};
pub use rng::RngStream;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (rejected before any computation starts).
    #[error("config error: {0}")]
    Config(String),
    /// Input data does not support the requested operation.
    #[error("data error: {0}")]
    Data(String),
    /// A model fit failed or diverged.
    #[error("fit error: {0}")]
    Fit(String),
    /// A numeric routine failed (quadrature non-convergence, singular solve).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
