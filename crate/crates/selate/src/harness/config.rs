//! Experiment configuration with benchmark defaults.

use serde::{Deserialize, Serialize};

use crate::data::Method;
use crate::datagen::{fnv1a, PopulationConfig};
use crate::estimators::{GridSpec, MleConfig, ScoreTrainConfig};
use crate::propensity::TrainConfig;
use crate::selection::SelectionSpec;
use crate::Result;

/// Full experiment description. Every field has a default matching the
/// benchmark configuration, so an empty JSON object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub population: PopulationConfig,
    pub selection: SelectionSpec,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Overlap truncation threshold.
    pub c: f64,
    /// Cross-validation folds for propensity calibration.
    pub folds: usize,
    pub propensity: TrainConfig,
    pub mle: MleConfig,
    pub score: ScoreTrainConfig,
    pub grid: GridSpec,
    /// Monte Carlo draws for the oracle ATE.
    pub oracle_draws: usize,
    /// Record wall-clock runtimes in reports. Off by default so repeated
    /// runs produce byte-identical output files.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            population: PopulationConfig::default(),
            selection: SelectionSpec::default(),
            methods: Method::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            c: 0.05,
            folds: 5,
            propensity: TrainConfig::default(),
            mle: MleConfig::default(),
            score: ScoreTrainConfig::default(),
            grid: GridSpec::default(),
            oracle_draws: 1_000_000,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        if self.seeds.is_empty() {
            return Err(crate::Error::Config("need at least one seed".into()));
        }
        if self.methods.is_empty() {
            return Err(crate::Error::Config("need at least one method".into()));
        }
        if !(self.c > 0.0 && self.c < 0.5) {
            return Err(crate::Error::Config(format!(
                "overlap threshold must lie in (0, 1/2), got {}",
                self.c
            )));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).unwrap_or_default().as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{NoiseFamily, NoiseMode, OutcomeForm};
    use crate::selection::SigmoidForm;

    #[test]
    fn empty_config_yields_benchmark_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg.population.n, 5000);
        assert_eq!(cfg.population.x_low, -3.0);
        assert_eq!(cfg.population.x_high, 3.0);
        assert_eq!(cfg.population.propensity_intercept, 0.5);
        assert_eq!(cfg.population.propensity_slope, 0.1);
        assert_eq!(cfg.population.outcome.form, OutcomeForm::poly_default());
        assert_eq!(cfg.population.outcome.noise.family, NoiseFamily::Normal);
        assert_eq!(cfg.population.outcome.noise.scale, 0.5);
        assert_eq!(cfg.population.outcome.noise.mode, NoiseMode::Additive);
        assert!(cfg.selection.det_enabled);
        assert_eq!(cfg.selection.x_thresh, 2.0);
        assert_eq!(cfg.selection.det_arm, 0);
        assert_eq!(cfg.selection.sig_form, SigmoidForm::OutcomeOnly);
        assert_eq!(cfg.selection.alpha, 3.0);
        assert_eq!(cfg.selection.gamma, 1.5);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.c, 0.05);
        assert_eq!(cfg.folds, 5);
        assert_eq!(cfg.propensity.hidden, vec![32, 32]);
        assert_eq!(cfg.propensity.learning_rate, 0.01);
        assert_eq!(cfg.mle.k, 5);
        assert_eq!(cfg.mle.lambda, 0.05);
        assert_eq!(cfg.mle.rounds, 2);
        assert_eq!(cfg.mle.beta_steps, 200);
        assert_eq!(cfg.score.lambda1, 0.05);
        assert_eq!(cfg.score.lambda2, 0.05);
        assert_eq!(cfg.score.learning_rate, 0.01);
        assert_eq!(cfg.grid.y_min, -10.0);
        assert_eq!(cfg.grid.y_max, 15.0);
        assert_eq!(cfg.grid.points, 400);
        assert_eq!(cfg.methods.len(), 9);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.c = 0.1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ExperimentConfig::from_json("{\"c\": 0.7}").is_err());
        assert!(ExperimentConfig::from_json("{\"seeds\": []}").is_err());
    }
}
