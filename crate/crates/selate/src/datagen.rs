//! Population data generation from structural equation models.
//!
//! Covariates are uniform on `[x_low, x_high]`, treatment follows a linear
//! propensity `e*(x) = intercept + slope * x`, and potential outcomes are
//! `mu_t(x)` plus (or times `1 +`) a centered noise draw.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetMeta, Sample};
use crate::rng::{RngStream, StreamId};
use crate::{Error, Result};

/// Shape parameter for Pareto noise; > 2 keeps the variance finite.
pub const PARETO_SHAPE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Normal,
    Laplace,
    /// Log-normal shifted to zero mean.
    LogNormalCentered,
    /// Pareto (shape [`PARETO_SHAPE`]) shifted to zero mean.
    ParetoCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    /// `y = mu_t(x) + eps`
    Additive,
    /// `y = (1 + eps) * mu_t(x)`
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    pub mode: NoiseMode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            family: NoiseFamily::Normal,
            scale: 0.5,
            mode: NoiseMode::Additive,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::Config(format!(
                "noise scale must be > 0, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        match self.family {
            NoiseFamily::Normal => rng.normal(0.0, self.scale),
            NoiseFamily::Laplace => rng.laplace(self.scale),
            NoiseFamily::LogNormalCentered => rng.log_normal_centered(self.scale),
            NoiseFamily::ParetoCentered => rng.pareto_centered(PARETO_SHAPE, self.scale),
        }
    }
}

/// Mean functions for the two potential outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeForm {
    /// Cubic polynomials in power basis, one coefficient list per arm.
    Poly { c0: Vec<f64>, c1: Vec<f64> },
    /// `mu_t(x) = 2x sin(2x) + t (x^2 + 0.1 x^4)`
    Sin,
    /// `mu_t(x) = x ln(x + 4) + t (x^2 ln(2x) + 0.1 x^4)`; defined for x > 0
    /// in the treated arm.
    Log,
    /// `mu_t(x) = 0.1 x + t x`
    SemiSyntheticLinear,
}

impl OutcomeForm {
    /// The benchmark default: `mu_0 = 1 + 0.5x - 0.2x^3`, `mu_1 = 3 - 0.5x + 0.3x^3`.
    pub fn poly_default() -> Self {
        OutcomeForm::Poly {
            c0: vec![1.0, 0.5, 0.0, -0.2],
            c1: vec![3.0, -0.5, 0.0, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeSpec {
    pub form: OutcomeForm,
    pub noise: NoiseSpec,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec {
            form: OutcomeForm::poly_default(),
            noise: NoiseSpec::default(),
        }
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Noiseless mean `mu_t(x)` for the selected functional form.
pub fn mean_function(spec: &OutcomeSpec, t: u8, x: f64) -> Result<f64> {
    match &spec.form {
        OutcomeForm::Poly { c0, c1 } => Ok(horner(if t == 1 { c1 } else { c0 }, x)),
        OutcomeForm::Sin => {
            let base = 2.0 * x * (2.0 * x).sin();
            Ok(base + f64::from(t) * (x * x + 0.1 * x.powi(4)))
        }
        OutcomeForm::Log => {
            if x + 4.0 <= 0.0 {
                return Err(Error::Data(format!("log form needs x + 4 > 0, got x = {x}")));
            }
            if t == 1 && 2.0 * x <= 0.0 {
                return Err(Error::Data(format!(
                    "log form treated arm needs 2x > 0, got x = {x}"
                )));
            }
            let base = x * (x + 4.0).ln();
            let lift = if t == 1 {
                x * x * (2.0 * x).ln() + 0.1 * x.powi(4)
            } else {
                0.0
            };
            Ok(base + lift)
        }
        OutcomeForm::SemiSyntheticLinear => Ok(0.1 * x + f64::from(t) * x),
    }
}

/// Configuration of one synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n: usize,
    pub x_low: f64,
    pub x_high: f64,
    pub propensity_intercept: f64,
    pub propensity_slope: f64,
    pub outcome: OutcomeSpec,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n: 5000,
            x_low: -3.0,
            x_high: 3.0,
            propensity_intercept: 0.5,
            propensity_slope: 0.1,
            outcome: OutcomeSpec::default(),
            seed: 0,
        }
    }
}

impl PopulationConfig {
    /// Covariate range actually sampled: the `Log` form restricts to the
    /// sub-range where both logarithms are defined (x > 0).
    pub fn effective_x_range(&self) -> (f64, f64) {
        match self.outcome.form {
            OutcomeForm::Log => (self.x_low.max(0.0), self.x_high),
            _ => (self.x_low, self.x_high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_low < self.x_high) {
            return Err(Error::Config(format!(
                "empty covariate range [{}, {}]",
                self.x_low, self.x_high
            )));
        }
        self.outcome.noise.validate()?;
        let (lo, hi) = self.effective_x_range();
        if !(lo < hi) {
            return Err(Error::Config(
                "covariate range is empty after the log-domain restriction".into(),
            ));
        }
        for x in [lo, hi] {
            let e = self.propensity_intercept + self.propensity_slope * x;
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!(
                    "true propensity {e} leaves (0, 1) at x = {x}"
                )));
            }
        }
        Ok(())
    }
}

/// True propensity `e*(x) = intercept + slope * x`.
pub fn true_propensity(cfg: &PopulationConfig, x: f64) -> Result<f64> {
    cfg.validate()?;
    let (lo, hi) = cfg.effective_x_range();
    if x < lo || x > hi {
        return Err(Error::Config(format!(
            "x = {x} outside the covariate range [{lo}, {hi}]"
        )));
    }
    Ok(cfg.propensity_intercept + cfg.propensity_slope * x)
}

fn potential_outcome(spec: &OutcomeSpec, t: u8, x: f64, eps: f64) -> Result<f64> {
    let mu = mean_function(spec, t, x)?;
    Ok(match spec.noise.mode {
        NoiseMode::Additive => mu + eps,
        NoiseMode::Multiplicative => (1.0 + eps) * mu,
    })
}

/// Draw `cfg.n` units from the structural equation model. All units start
/// `selected = true`; selection is applied separately.
pub fn generate_population(cfg: &PopulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut x_rng = root.substream(StreamId::Covariate);
    let mut t_rng = root.substream(StreamId::Treatment);
    let mut e_rng = root.substream(StreamId::Noise);

    let (lo, hi) = cfg.effective_x_range();
    let mut samples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = x_rng.uniform(lo, hi);
        let e_star = cfg.propensity_intercept + cfg.propensity_slope * x;
        let t = u8::from(t_rng.bernoulli(e_star));
        let eps0 = cfg.outcome.noise.draw(&mut e_rng);
        let eps1 = cfg.outcome.noise.draw(&mut e_rng);
        let y0 = potential_outcome(&cfg.outcome, 0, x, eps0)?;
        let y1 = potential_outcome(&cfg.outcome, 1, x, eps1)?;
        samples.push(Sample::new(x, t, y0, y1));
    }

    let mut meta = DatasetMeta {
        config_hash: config_hash(cfg),
        note: String::new(),
    };
    if (lo, hi) != (cfg.x_low, cfg.x_high) {
        meta.note = format!("covariate range restricted to [{lo}, {hi}] for the log form");
    }
    Dataset::new(samples, cfg.seed, meta)
}

/// FNV-1a over the canonical JSON encoding of the config.
pub fn config_hash(cfg: &PopulationConfig) -> u64 {
    fnv1a(serde_json::to_string(cfg).unwrap_or_default().as_bytes())
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Monte Carlo oracle for `E[mu_1(X) - mu_0(X)]` over the covariate
/// distribution. Centered noise contributes zero in expectation in both
/// additive and multiplicative modes.
pub fn oracle_ate(cfg: &PopulationConfig, n_mc: usize) -> Result<f64> {
    cfg.validate()?;
    if n_mc < 100_000 {
        return Err(Error::Config(format!(
            "oracle_ate needs at least 1e5 draws, got {n_mc}"
        )));
    }
    let (lo, hi) = cfg.effective_x_range();
    let mut rng = RngStream::new(cfg.seed).substream(StreamId::Oracle);
    let mut sum = 0.0;
    for _ in 0..n_mc {
        let x = rng.uniform(lo, hi);
        sum += mean_function(&cfg.outcome, 1, x)? - mean_function(&cfg.outcome, 0, x)?;
    }
    Ok(sum / n_mc as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propensity_examples() {
        let cfg = PopulationConfig::default();
        assert!((true_propensity(&cfg, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((true_propensity(&cfg, 3.0).unwrap() - 0.8).abs() < 1e-15);
        assert!(true_propensity(&cfg, -5.0).is_err());
    }

    #[test]
    fn propensity_boundary_rejected() {
        let cfg = PopulationConfig {
            x_low: -5.0,
            ..PopulationConfig::default()
        };
        // e*(-5) = 0 violates the open interval.
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mean_function_examples() {
        let spec = OutcomeSpec::default();
        assert!((mean_function(&spec, 0, 1.0).unwrap() - 1.3).abs() < 1e-12);
        assert!((mean_function(&spec, 1, 0.0).unwrap() - 3.0).abs() < 1e-12);

        let semi = OutcomeSpec {
            form: OutcomeForm::SemiSyntheticLinear,
            ..OutcomeSpec::default()
        };
        assert!((mean_function(&semi, 1, 2.0).unwrap() - 2.2).abs() < 1e-12);
    }

    #[test]
    fn log_form_domain() {
        let spec = OutcomeSpec {
            form: OutcomeForm::Log,
            ..OutcomeSpec::default()
        };
        assert!(mean_function(&spec, 1, -1.0).is_err());
        assert!(mean_function(&spec, 0, -1.0).is_ok());
        assert!(mean_function(&spec, 0, -5.0).is_err());
        let cfg = PopulationConfig {
            n: 100,
            outcome: spec,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        assert!(ds.iter().all(|s| s.x > 0.0));
        assert!(ds.meta.note.contains("restricted"));
    }

    #[test]
    fn population_treatment_rate() {
        let cfg = PopulationConfig {
            n: 5000,
            seed: 3,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        assert_eq!(ds.len(), 5000);
        let rate = ds.iter().filter(|s| s.t == 1).count() as f64 / 5000.0;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn empty_population() {
        let cfg = PopulationConfig {
            n: 0,
            ..PopulationConfig::default()
        };
        assert!(generate_population(&cfg).unwrap().is_empty());
    }

    #[test]
    fn zero_noise_recovers_means() {
        // scale must be > 0; use a vanishing scale instead of exactly 0.
        let mut cfg = PopulationConfig {
            n: 50,
            ..PopulationConfig::default()
        };
        cfg.outcome.noise.scale = 1e-300;
        let ds = generate_population(&cfg).unwrap();
        for s in ds.iter() {
            let mu0 = mean_function(&cfg.outcome, 0, s.x).unwrap();
            assert!((s.y0 - mu0).abs() < 1e-9);
        }
    }

    #[test]
    fn multiplicative_zero_noise_is_exact() {
        let spec = OutcomeSpec {
            noise: NoiseSpec {
                mode: NoiseMode::Multiplicative,
                ..NoiseSpec::default()
            },
            ..OutcomeSpec::default()
        };
        let y = potential_outcome(&spec, 1, 2.0, 0.0).unwrap();
        assert_eq!(y, mean_function(&spec, 1, 2.0).unwrap());
    }

    #[test]
    fn oracle_ate_poly_default() {
        let cfg = PopulationConfig::default();
        let tau = oracle_ate(&cfg, 1_000_000).unwrap();
        // mu1 - mu0 = 2 - x + 0.5x^3; odd moments of U(-3,3) vanish.
        assert!((tau - 2.0).abs() < 0.02, "tau {tau}");
    }

    #[test]
    fn oracle_ate_semi_synthetic() {
        let cfg = PopulationConfig {
            outcome: OutcomeSpec {
                form: OutcomeForm::SemiSyntheticLinear,
                ..OutcomeSpec::default()
            },
            ..PopulationConfig::default()
        };
        let tau = oracle_ate(&cfg, 1_000_000).unwrap();
        assert!(tau.abs() < 0.02, "tau {tau}");
    }

    #[test]
    fn oracle_ate_identical_arms() {
        let cfg = PopulationConfig {
            outcome: OutcomeSpec {
                form: OutcomeForm::Poly {
                    c0: vec![1.0, 2.0],
                    c1: vec![1.0, 2.0],
                },
                ..OutcomeSpec::default()
            },
            ..PopulationConfig::default()
        };
        assert_eq!(oracle_ate(&cfg, 100_000).unwrap(), 0.0);
    }

    #[test]
    fn additive_sample_ate_matches_oracle() {
        let cfg = PopulationConfig {
            n: 1_000_000,
            seed: 17,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let n = ds.len() as f64;
        let mean: f64 = ds.iter().map(|s| s.y1 - s.y0).sum::<f64>() / n;
        let var: f64 = ds
            .iter()
            .map(|s| (s.y1 - s.y0 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let se = (var / n).sqrt();
        let tau = oracle_ate(&cfg, 1_000_000).unwrap();
        assert!(
            (mean - tau).abs() < 3.0 * se + 0.01,
            "mean {mean} tau {tau} se {se}"
        );
    }
}
