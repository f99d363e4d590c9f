//! Shared domain types: samples, datasets, and estimate records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One unit: covariate, treatment, both potential outcomes (oracle fields),
/// factual outcome, and the selection flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: f64,
    /// Binary treatment, 0 or 1.
    pub t: u8,
    pub y0: f64,
    pub y1: f64,
    /// Factual outcome; always equals `y1` when `t == 1`, else `y0`.
    pub y: f64,
    pub selected: bool,
}

impl Sample {
    pub fn new(x: f64, t: u8, y0: f64, y1: f64) -> Self {
        let y = if t == 1 { y1 } else { y0 };
        Sample {
            x,
            t,
            y0,
            y1,
            y,
            selected: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t > 1 {
            return Err(Error::Data(format!("treatment must be 0 or 1, got {}", self.t)));
        }
        let expected = if self.t == 1 { self.y1 } else { self.y0 };
        if self.y.to_bits() != expected.to_bits() {
            return Err(Error::Data(
                "factual outcome inconsistent with potential outcomes".into(),
            ));
        }
        Ok(())
    }
}

/// Provenance carried with every dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Hash of the generating configuration.
    pub config_hash: u64,
    /// Free-form note, e.g. a recorded covariate-range restriction.
    pub note: String,
}

/// Immutable collection of samples from one generating configuration.
///
/// Filtered views are fresh datasets; the parent is never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    pub seed: u64,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, seed: u64, meta: DatasetMeta) -> Result<Self> {
        for s in &samples {
            s.validate()?;
        }
        Ok(Dataset { samples, seed, meta })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// New dataset holding the samples that satisfy `pred`.
    pub fn filtered(&self, pred: impl Fn(&Sample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().copied().filter(|s| pred(s)).collect(),
            seed: self.seed,
            meta: self.meta.clone(),
        }
    }

    /// New dataset holding the samples at `indices` (in that order).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
            seed: self.seed,
            meta: self.meta.clone(),
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Indices of units with treatment `arm`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.t == arm)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_both_arms(&self) -> bool {
        let mut seen = [false, false];
        for s in &self.samples {
            seen[s.t as usize] = true;
        }
        seen[0] && seen[1]
    }
}

/// Estimation method names; `as_str` values form the stable CLI vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ipw,
    Poly,
    Mle,
    MleBeta,
    Sm,
    SmBeta,
    Heckman,
    Aipw,
    AipwOracle,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ipw,
        Method::Poly,
        Method::Mle,
        Method::MleBeta,
        Method::Sm,
        Method::SmBeta,
        Method::Heckman,
        Method::Aipw,
        Method::AipwOracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ipw => "ipw",
            Method::Poly => "poly",
            Method::Mle => "mle",
            Method::MleBeta => "mle_beta",
            Method::Sm => "sm",
            Method::SmBeta => "sm_beta",
            Method::Heckman => "heckman",
            Method::Aipw => "aipw",
            Method::AipwOracle => "aipw_oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ATE estimate with per-method diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteEstimate {
    pub method: Method,
    pub value: f64,
    /// Units that actually entered the estimate.
    pub n_used: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl AteEstimate {
    pub fn new(method: Method, value: f64, n_used: usize) -> Self {
        AteEstimate {
            method,
            value,
            n_used,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_diag(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_enforced() {
        let mut s = Sample::new(0.5, 1, 1.0, 2.0);
        assert_eq!(s.y, 2.0);
        s.y = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn filtered_never_mutates_parent() {
        let samples = vec![Sample::new(0.0, 0, 1.0, 2.0), Sample::new(1.0, 1, 0.0, 3.0)];
        let ds = Dataset::new(samples, 9, DatasetMeta::default()).unwrap();
        let view = ds.filtered(|s| s.t == 1);
        assert_eq!(view.len(), 1);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("tmle".parse::<Method>().is_err());
    }
}
