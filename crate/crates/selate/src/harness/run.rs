//! Experiment orchestration: per-seed pipeline and summary statistics.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Method};
use crate::datagen::{generate_population, oracle_ate, true_propensity, PopulationConfig};
use crate::estimators::{
    aipw_ate, estimate_ate, fit_mle, fit_mle_with_beta, fit_score_model, heckman_ate,
    polynomial_fit, Fitted, ScoreModel,
};
use crate::harness::config::ExperimentConfig;
use crate::numeric::mean_std;
use crate::propensity::{fit_propensity, overlap_filter, OverlapRegions, PropensityModel};
use crate::rng::{RngStream, StreamId};
use crate::selection::apply_selection_flagged;
use crate::{Error, Result};

/// One (seed, method) result; failures keep the row with NaN values and the
/// error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub method: Method,
    pub estimate: f64,
    /// `estimate - oracle_ate`.
    pub error: f64,
    pub runtime_sec: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
    pub oracle_ate: f64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub mean_error: f64,
    pub std_error: f64,
    pub n_seeds: usize,
    /// Standard deviation reported as 0 from a single seed.
    pub single_seed: bool,
}

/// Per-seed state shared by the estimators.
struct SeedContext {
    population: Dataset,
    flagged_population: Dataset,
    observed: Dataset,
    observed_b: Dataset,
    prop: PropensityModel,
    regions: OverlapRegions,
    pop_cfg: PopulationConfig,
    /// Corrected composite score fit, shared by the `mle_beta` and `sm_beta`
    /// methods (they use the same selection network).
    corrected_score: Option<ScoreModel>,
}

fn seed_context(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let pop_cfg = PopulationConfig {
        seed,
        ..cfg.population.clone()
    };
    let population = generate_population(&pop_cfg)?;
    let mut sel_rng = RngStream::new(seed).substream(StreamId::Selection);
    let (flagged_population, observed, _) =
        apply_selection_flagged(&population, &cfg.selection, &mut sel_rng)?;
    if observed.is_empty() {
        return Err(Error::Data("selection produced an empty observed dataset".into()));
    }
    let mut train_cfg = cfg.propensity.clone();
    train_cfg.seed = seed;
    let prop = fit_propensity(&observed, cfg.folds, &train_cfg)?;
    let regions = overlap_filter(&observed, &prop, cfg.c)?;
    let observed_b = observed.subset(&regions.b_indices);

    let corrected_score = if cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::MleBeta | Method::SmBeta))
    {
        let mut score_cfg = cfg.score.clone();
        score_cfg.seed = seed;
        Some(fit_score_model(&observed_b, true, &score_cfg, &cfg.grid)?)
    } else {
        None
    };

    Ok(SeedContext {
        population,
        flagged_population,
        observed,
        observed_b,
        prop,
        regions,
        pop_cfg,
        corrected_score,
    })
}

/// Per-arm polynomial fit over the units of `arm` within its overlap region.
fn poly_arm_coeffs(ctx: &SeedContext, arm: u8) -> Result<Vec<f64>> {
    let samples = ctx.observed.samples();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &i in ctx.regions.region_for_arm(arm) {
        let s = &samples[i];
        if s.t == arm {
            xs.push(s.x);
            ys.push(s.y);
        }
    }
    polynomial_fit(&xs, &ys, 3)
}

/// Polynomial outcome models for AIPW, fitted on the working dataset.
fn aipw_outcome_coeffs(working: &Dataset) -> Result<[Vec<f64>; 2]> {
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in 0..2u8 {
        let rows: Vec<_> = working.iter().filter(|s| s.t == arm).collect();
        let xs: Vec<f64> = rows.iter().map(|s| s.x).collect();
        let ys: Vec<f64> = rows.iter().map(|s| s.y).collect();
        out[arm as usize] = polynomial_fit(&xs, &ys, 3)?;
    }
    Ok(out)
}

fn run_method(cfg: &ExperimentConfig, ctx: &SeedContext, seed: u64, method: Method) -> Result<f64> {
    match method {
        Method::Ipw => {
            estimate_ate(method, &ctx.observed, &ctx.prop, &ctx.regions, None).map(|e| e.value)
        }
        Method::Poly => {
            let coeffs = [poly_arm_coeffs(ctx, 0)?, poly_arm_coeffs(ctx, 1)?];
            estimate_ate(
                method,
                &ctx.observed,
                &ctx.prop,
                &ctx.regions,
                Some(&Fitted::Poly { coeffs }),
            )
            .map(|e| e.value)
        }
        Method::Mle => {
            let mut mle_cfg = cfg.mle.clone();
            mle_cfg.seed = seed;
            let fit = fit_mle(&ctx.observed_b, false, &mle_cfg, &cfg.grid)?;
            estimate_ate(
                method,
                &ctx.observed,
                &ctx.prop,
                &ctx.regions,
                Some(&Fitted::Mle(fit)),
            )
            .map(|e| e.value)
        }
        Method::MleBeta => {
            let mut mle_cfg = cfg.mle.clone();
            mle_cfg.seed = seed;
            let beta = ctx
                .corrected_score
                .as_ref()
                .and_then(|c| c.beta.clone())
                .ok_or_else(|| Error::Fit("corrected score fit missing for mle_beta".into()))?;
            let fit = fit_mle_with_beta(&ctx.observed_b, &mle_cfg, &cfg.grid, beta)?;
            estimate_ate(
                method,
                &ctx.observed,
                &ctx.prop,
                &ctx.regions,
                Some(&Fitted::Mle(fit)),
            )
            .map(|e| e.value)
        }
        Method::Sm => {
            let mut score_cfg = cfg.score.clone();
            score_cfg.seed = seed;
            let fit = fit_score_model(&ctx.observed_b, false, &score_cfg, &cfg.grid)?;
            estimate_ate(
                method,
                &ctx.observed,
                &ctx.prop,
                &ctx.regions,
                Some(&Fitted::Score(fit)),
            )
            .map(|e| e.value)
        }
        Method::SmBeta => {
            let fit = ctx
                .corrected_score
                .as_ref()
                .ok_or_else(|| Error::Fit("corrected score fit missing for sm_beta".into()))?;
            estimate_ate(
                method,
                &ctx.observed,
                &ctx.prop,
                &ctx.regions,
                Some(&Fitted::Score(fit.clone())),
            )
            .map(|e| e.value)
        }
        Method::Heckman => {
            heckman_ate(&ctx.observed, &ctx.flagged_population, false).map(|e| e.value)
        }
        Method::Aipw => {
            let coeffs = aipw_outcome_coeffs(&ctx.observed)?;
            let prop = &ctx.prop;
            aipw_ate(&ctx.observed, &|x| prop.predict(x), &coeffs, false).map(|e| e.value)
        }
        Method::AipwOracle => {
            // Oracle upper bound: the full unselected dataset with the true
            // propensity.
            let coeffs = aipw_outcome_coeffs(&ctx.population)?;
            let pop_cfg = &ctx.pop_cfg;
            aipw_ate(
                &ctx.population,
                &|x| true_propensity(pop_cfg, x).unwrap_or(0.5),
                &coeffs,
                true,
            )
            .map(|e| e.value)
        }
    }
}

/// Run the full pipeline for every (seed, method) pair. Seeds run in
/// parallel workers; rows come back in (seed, method) order and per-method
/// failures are recorded rather than aborting the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let oracle = oracle_ate(&cfg.population, cfg.oracle_draws)?;
    let config_hash = cfg.hash();

    let per_seed: Vec<Result<Vec<RunRow>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(cfg, seed)?;
            let mut rows = Vec::with_capacity(cfg.methods.len());
            for &method in &cfg.methods {
                let start = Instant::now();
                let outcome = run_method(cfg, &ctx, seed, method);
                let runtime = if cfg.timing {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                let row = match outcome {
                    Ok(value) => RunRow {
                        seed,
                        method,
                        estimate: value,
                        error: value - oracle,
                        runtime_sec: runtime,
                        failure: None,
                    },
                    Err(e) => RunRow {
                        seed,
                        method,
                        estimate: f64::NAN,
                        error: f64::NAN,
                        runtime_sec: runtime,
                        failure: Some(e.to_string()),
                    },
                };
                rows.push(row);
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.seeds.len() * cfg.methods.len());
    for seed_rows in per_seed {
        rows.extend(seed_rows?);
    }
    Ok(RunReport {
        rows,
        oracle_ate: oracle,
        config_hash,
    })
}

/// Per-method mean and sample standard deviation of the error over seeds.
pub fn summarize(report: &RunReport) -> Result<Vec<SummaryRow>> {
    if report.rows.is_empty() {
        return Err(Error::Data("cannot summarize an empty report".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    for row in &report.rows {
        if !methods.contains(&row.method) {
            methods.push(row.method);
        }
    }
    Ok(methods
        .into_iter()
        .map(|method| {
            let errors: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.method == method && r.failure.is_none())
                .map(|r| r.error)
                .collect();
            let (mean, std) = mean_std(&errors);
            SummaryRow {
                method,
                mean_error: mean,
                std_error: std,
                n_seeds: errors.len(),
                single_seed: errors.len() < 2,
            }
        })
        .collect())
}
