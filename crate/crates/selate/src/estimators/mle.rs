//! Gaussian-mixture maximum likelihood with an optional learned selection
//! weight `beta(x, y, t)`.
//!
//! The corrected fit obtains `beta` from the composite-score selection
//! objective (shared with the score-matching estimator), runs weighted EM
//! per arm with sample weights `1 / beta`, and then refines `beta` with
//! gradient steps on the observed-data negative log-likelihood (plus the
//! `(log beta)^2` regularizer) against the frozen mixtures, alternating with
//! weighted EM. Starting the alternation from `beta = 1` is a fixed point
//! of the likelihood: the mixtures simply absorb the selection tilt, which
//! is why the warm start is needed.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::estimators::gmm::{gmm_weighted_em, GmmParams};
use crate::estimators::score::{fit_score_model, ScoreTrainConfig};
use crate::estimators::GridSpec;
use crate::nnet::{Activation, Adam, Graph, Matrix, Mlp};
use crate::{Error, Result};

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 1e4;

/// Positive selection weight `beta(x, y, t) = exp(MLP([x, y, t]))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaModel {
    pub net: Mlp,
}

impl BetaModel {
    /// One hidden layer of 10 tanh units; the output layer starts at zero so
    /// the initial weight is exactly `beta = 1` everywhere.
    pub fn new(seed: u64) -> Self {
        let mut net = Mlp::new(&[3, 10, 1], Activation::Tanh, seed);
        let last = net.weights.len() - 1;
        net.weights[last].iter_mut().for_each(|w| *w = 0.0);
        net.biases[last].iter_mut().for_each(|b| *b = 0.0);
        BetaModel { net }
    }

    /// `log beta` before clamping.
    pub fn raw(&self, x: f64, y: f64, t: u8) -> f64 {
        self.net
            .forward_scalar(&[x, y, f64::from(t)])
            .expect("beta network takes (x, y, t)")
    }

    /// `beta`, clamped to `[BETA_MIN, BETA_MAX]`.
    pub fn beta(&self, x: f64, y: f64, t: u8) -> f64 {
        self.raw(x, y, t).exp().clamp(BETA_MIN, BETA_MAX)
    }

    /// Inverse-beta sample weight, with a flag when the clamp was active.
    pub fn weight(&self, x: f64, y: f64, t: u8) -> (f64, bool) {
        let b = self.raw(x, y, t).exp();
        let clamped = !(BETA_MIN..=BETA_MAX).contains(&b);
        (1.0 / b.clamp(BETA_MIN, BETA_MAX), clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    /// Mixture components per arm.
    pub k: usize,
    /// Regularization strength on `(log beta)^2` in the refinement steps.
    pub lambda: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Likelihood refinement cycles after the warm start.
    pub rounds: usize,
    /// Beta gradient steps per refinement cycle.
    pub beta_steps: usize,
    pub learning_rate: f64,
    /// Grid resolution for the per-unit likelihood normalizer.
    pub train_grid_points: usize,
    /// Units per normalizer minibatch in the refinement steps.
    pub normalizer_block: usize,
    /// Composite-score training that produces the warm-start beta.
    pub beta_training: ScoreTrainConfig,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            k: 5,
            lambda: 0.05,
            em_tol: 1e-6,
            em_max_iter: 500,
            rounds: 2,
            beta_steps: 200,
            learning_rate: 0.01,
            train_grid_points: 64,
            normalizer_block: 512,
            beta_training: ScoreTrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub arm_models: [GmmParams; 2],
    pub beta: Option<BetaModel>,
    /// Weighted log-likelihood trace of every EM run, for monotonicity
    /// assertions.
    pub em_traces: Vec<Vec<f64>>,
    /// Whether any inverse-beta weight hit the clamp.
    pub beta_clamped: bool,
    /// Final observed-data negative log-likelihood plus regularizer.
    pub final_objective: f64,
}

fn arm_points(observed_b: &Dataset, arm: u8) -> Vec<(f64, f64)> {
    observed_b
        .iter()
        .filter(|s| s.t == arm)
        .map(|s| (s.x, s.y))
        .collect()
}

fn fit_arms(
    observed_b: &Dataset,
    mut weights_fn: impl FnMut(f64, f64, u8) -> f64,
    cfg: &MleConfig,
    traces: &mut Vec<Vec<f64>>,
) -> Result<[GmmParams; 2]> {
    let mut models: Vec<GmmParams> = Vec::with_capacity(2);
    for arm in 0..2u8 {
        let pts = arm_points(observed_b, arm);
        if pts.is_empty() {
            return Err(Error::Data(format!("no units in arm {arm} within region B")));
        }
        let weights: Vec<f64> = pts.iter().map(|&(x, y)| weights_fn(x, y, arm)).collect();
        let fit = gmm_weighted_em(&pts, &weights, cfg.k, cfg.em_tol, cfg.em_max_iter)?;
        traces.push(fit.loglik_trace);
        models.push(fit.params);
    }
    Ok([models.remove(0), models.remove(0)])
}

fn weighted_arms(
    observed_b: &Dataset,
    beta: &BetaModel,
    cfg: &MleConfig,
    traces: &mut Vec<Vec<f64>>,
    clamped: &mut bool,
) -> Result<[GmmParams; 2]> {
    fit_arms(
        observed_b,
        |x, y, t| {
            let (w, was_clamped) = beta.weight(x, y, t);
            *clamped |= was_clamped;
            w
        },
        cfg,
        traces,
    )
}

/// Observed-data NLL of the current (GMM, beta) pair plus the regularizer,
/// with the per-unit normalizer evaluated on the training grid.
fn mle_objective(
    observed_b: &Dataset,
    models: &[GmmParams; 2],
    beta: &BetaModel,
    lambda: f64,
    ys: &[f64],
    dy: f64,
) -> f64 {
    let n = observed_b.len() as f64;
    let mut total = 0.0;
    for s in observed_b.iter() {
        let model = &models[s.t as usize];
        let raw = beta.raw(s.x, s.y, s.t);
        let dens = model.conditional_density(s.x, s.y).max(1e-300);
        let mut z = 0.0;
        for &y in ys {
            z += model.conditional_density(s.x, y) * beta.beta(s.x, y, s.t) * dy;
        }
        total += -(dens.ln() + raw - z.max(1e-300).ln()) + lambda * raw * raw;
    }
    total / n
}

/// Fit per-arm mixtures on region-B data. `correction = false` is plain
/// per-arm EM; otherwise the selection weight is trained by the composite
/// score objective and refined per [`fit_mle_with_beta`].
pub fn fit_mle(
    observed_b: &Dataset,
    correction: bool,
    cfg: &MleConfig,
    grid: &GridSpec,
) -> Result<MleFit> {
    if !correction {
        let mut traces = Vec::new();
        let arm_models = fit_arms(observed_b, |_, _, _| 1.0, cfg, &mut traces)?;
        return Ok(MleFit {
            arm_models,
            beta: None,
            em_traces: traces,
            beta_clamped: false,
            final_objective: f64::NAN,
        });
    }
    let mut beta_cfg = cfg.beta_training.clone();
    beta_cfg.seed = cfg.seed;
    let composite = fit_score_model(observed_b, true, &beta_cfg, grid)?;
    let beta = composite.beta.expect("corrected score fit carries beta");
    fit_mle_with_beta(observed_b, cfg, grid, beta)
}

/// Weighted EM with an externally supplied selection weight, then `rounds`
/// cycles of likelihood refinement of `beta` (mixtures frozen) followed by
/// re-running the weighted EM.
pub fn fit_mle_with_beta(
    observed_b: &Dataset,
    cfg: &MleConfig,
    grid: &GridSpec,
    mut beta: BetaModel,
) -> Result<MleFit> {
    let mut traces = Vec::new();
    let mut clamped = false;
    let mut models = weighted_arms(observed_b, &beta, cfg, &mut traces, &mut clamped)?;

    let n = observed_b.len();
    let m = cfg.train_grid_points.max(8);
    let dy = (grid.y_max - grid.y_min) / (m - 1) as f64;
    let ys: Vec<f64> = (0..m).map(|j| grid.y_min + dy * j as f64).collect();

    if cfg.rounds > 0 && cfg.beta_steps > 0 {
        // Observed points (x, y, t) and grid rows (x_i, y_j, t_i), with unit
        // i occupying the contiguous row block i*m..(i+1)*m.
        let pts_rows: Vec<Vec<f64>> = observed_b
            .iter()
            .map(|s| vec![s.x, s.y, f64::from(s.t)])
            .collect();
        let mut grid_rows = Vec::with_capacity(n * m);
        for s in observed_b.iter() {
            for &y in &ys {
                grid_rows.push(vec![s.x, y, f64::from(s.t)]);
            }
        }
        let block = cfg.normalizer_block.clamp(1, n);
        let mut opt = Adam::new(cfg.learning_rate);
        let mut step_counter = 0usize;

        for _ in 0..cfg.rounds {
            // Conditional densities under the frozen mixtures, times the
            // Riemann step; recomputed once per cycle.
            let mut dens = vec![0.0f64; n * m];
            for (i, s) in observed_b.iter().enumerate() {
                let model = &models[s.t as usize];
                for (j, &y) in ys.iter().enumerate() {
                    dens[i * m + j] = model.conditional_density(s.x, y) * dy;
                }
            }

            // Gradient steps on beta: mean over a rotating unit block of
            // -raw_i + ln Z_i + lambda raw_i^2, with
            // Z_i = sum_j p(y_j | x_i, t_i) exp(raw_ij) dy.
            for _ in 0..cfg.beta_steps {
                let start = (step_counter * block) % n;
                step_counter += 1;
                let idx: Vec<usize> = (0..block).map(|j| (start + j) % n).collect();

                let pts = Matrix::from_rows(
                    &idx.iter().map(|&i| pts_rows[i].clone()).collect::<Vec<_>>(),
                );
                let mut block_grid = Vec::with_capacity(block * m);
                let mut block_dens = Vec::with_capacity(block * m);
                for &i in &idx {
                    for j in 0..m {
                        block_grid.push(grid_rows[i * m + j].clone());
                        block_dens.push(dens[i * m + j]);
                    }
                }
                let grid_mat = Matrix::from_rows(&block_grid);
                let dens_mat = Matrix::from_vec(block, m, block_dens);

                let mut g = Graph::new(&[&beta.net]);
                let raw_pts = g.net_forward_data(0, &pts);
                let raw_grid = g.net_forward_data(0, &grid_mat);
                let reshaped = g.reshape(raw_grid, block, m);
                let expd = g.exp(reshaped);
                let weighted = g.mul_const(expd, dens_mat);
                let z = g.row_sum(weighted);
                let ln_z = g.ln(z);
                let neg_raw = g.scale(raw_pts, -1.0);
                let fit_term = g.add(neg_raw, ln_z);
                let raw_sq = g.square(raw_pts);
                let reg = g.scale(raw_sq, cfg.lambda);
                let per_unit = g.add(fit_term, reg);
                let loss = g.mean_all(per_unit);
                if !g.scalar(loss).is_finite() {
                    return Err(Error::Fit("beta refinement produced a non-finite loss".into()));
                }
                let grads = g.backward(loss);
                drop(g);
                opt.step(&mut beta.net, &grads.nets[0]);
            }

            models = weighted_arms(observed_b, &beta, cfg, &mut traces, &mut clamped)?;
        }
    }

    let final_objective = mle_objective(observed_b, &models, &beta, cfg.lambda, &ys, dy);
    Ok(MleFit {
        arm_models: models,
        beta: Some(beta),
        em_traces: traces,
        beta_clamped: clamped,
        final_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_population, oracle_ate, PopulationConfig};

    fn assert_monotone(traces: &[Vec<f64>]) {
        for trace in traces {
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "EM log-likelihood decreased");
            }
        }
    }

    #[test]
    fn plain_mle_on_unbiased_data() {
        let cfg = PopulationConfig {
            n: 3000,
            seed: 61,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let fit = fit_mle(&ds, false, &MleConfig::default(), &GridSpec::default()).unwrap();
        assert_monotone(&fit.em_traces);

        let tau_hat: f64 = ds
            .iter()
            .map(|s| {
                fit.arm_models[1].conditional_mean(s.x) - fit.arm_models[0].conditional_mean(s.x)
            })
            .sum::<f64>()
            / ds.len() as f64;
        let tau = oracle_ate(&cfg, 200_000).unwrap();
        assert!((tau_hat - tau).abs() < 0.2, "err {}", tau_hat - tau);
    }

    #[test]
    fn unit_beta_and_zero_rounds_equals_plain_fit() {
        let cfg = PopulationConfig {
            n: 400,
            seed: 62,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let mle_cfg = MleConfig {
            rounds: 0,
            beta_training: ScoreTrainConfig {
                iterations: 0,
                ..ScoreTrainConfig::default()
            },
            ..MleConfig::default()
        };
        let plain = fit_mle(&ds, false, &mle_cfg, &GridSpec::default()).unwrap();
        let corrected = fit_mle(&ds, true, &mle_cfg, &GridSpec::default()).unwrap();
        assert_eq!(plain.arm_models[0], corrected.arm_models[0]);
        assert_eq!(plain.arm_models[1], corrected.arm_models[1]);
        // Beta exists and is exactly one everywhere at initialization.
        let beta = corrected.beta.unwrap();
        assert_eq!(beta.beta(0.3, -1.0, 1), 1.0);
    }
}
