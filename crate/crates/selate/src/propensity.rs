//! Propensity estimation, isotonic calibration, and overlap trimming.
//!
//! A small classifier maps `x` to a raw treatment score; a monotone step
//! function fitted by pool-adjacent-violators on out-of-fold predictions
//! calibrates the score into a probability.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nnet::{Activation, Adam, Graph, Matrix, Mlp};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Classifier training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden layer sizes; empty list selects the affine (logistic) fallback.
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            iterations: 2000,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Affine score with no hidden layers, for speed and determinism.
    pub fn logistic_fallback() -> Self {
        TrainConfig {
            hidden: Vec::new(),
            ..TrainConfig::default()
        }
    }
}

/// Monotone step function fitted by pool-adjacent-violators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isotonic {
    /// Block centers (last raw score of each block), strictly increasing.
    cuts: Vec<f64>,
    /// Fitted value per block, non-decreasing.
    values: Vec<f64>,
}

impl Isotonic {
    /// Weighted isotonic least squares on `(raw, target, weight)` triples.
    pub fn fit(points: &[(f64, f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Fit("isotonic fit needs at least one point".into()));
        }
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        // Blocks of (sum w*y, sum w, last raw).
        let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
        for &(raw, y, w) in &sorted {
            if !(w > 0.0) {
                return Err(Error::Fit("isotonic weights must be positive".into()));
            }
            blocks.push((w * y, w, raw));
            // Pool while the last two blocks violate monotonicity.
            while blocks.len() >= 2 {
                let n = blocks.len();
                let mean_prev = blocks[n - 2].0 / blocks[n - 2].1;
                let mean_last = blocks[n - 1].0 / blocks[n - 1].1;
                if mean_prev <= mean_last {
                    break;
                }
                let (sy, sw, raw) = blocks.pop().unwrap();
                let prev = blocks.last_mut().unwrap();
                prev.0 += sy;
                prev.1 += sw;
                prev.2 = raw;
            }
        }

        let mut cuts = Vec::with_capacity(blocks.len());
        let mut values = Vec::with_capacity(blocks.len());
        for (sy, sw, raw) in blocks {
            cuts.push(raw);
            values.push(sy / sw);
        }
        Ok(Isotonic { cuts, values })
    }

    /// Evaluate the step function; inputs beyond the fitted range clamp to
    /// the nearest step.
    pub fn apply(&self, raw: f64) -> f64 {
        match self
            .cuts
            .binary_search_by(|c| c.partial_cmp(&raw).unwrap())
        {
            Ok(i) => self.values[i],
            Err(i) => self.values[i.min(self.values.len() - 1)],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Calibrated propensity model.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub classifier: Mlp,
    pub calibrator: Isotonic,
}

fn layer_sizes(cfg: &TrainConfig) -> Vec<usize> {
    let mut sizes = vec![1];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    sizes
}

/// Full-batch training of the raw classifier with logistic loss.
fn train_classifier(xs: &[f64], ts: &[f64], cfg: &TrainConfig, seed: u64) -> Mlp {
    let mut net = Mlp::new(&layer_sizes(cfg), Activation::Relu, seed);
    let data = Matrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>());
    let targets = Matrix::column(ts);
    let mut opt = Adam::new(cfg.learning_rate);
    for _ in 0..cfg.iterations {
        let mut g = Graph::new(&[&net]);
        let logits = g.net_forward_data(0, &data);
        let loss = g.bce_with_logits(logits, &targets);
        let grads = g.backward(loss);
        drop(g);
        opt.step(&mut net, &grads.nets[0]);
    }
    net
}

/// Fit the classifier on `(x -> t)` and calibrate it with isotonic
/// regression on predictions pooled across `folds` cross-validation folds.
pub fn fit_propensity(observed: &Dataset, folds: usize, cfg: &TrainConfig) -> Result<PropensityModel> {
    if !observed.has_both_arms() {
        return Err(Error::Fit(
            "cannot fit propensity: degenerate treatment".into(),
        ));
    }
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let n = observed.len();
    if n < folds {
        return Err(Error::Fit(format!(
            "cannot fit propensity: {n} samples for {folds} folds"
        )));
    }
    let xs = observed.xs();
    let ts: Vec<f64> = observed.iter().map(|s| f64::from(s.t)).collect();

    let mut rng = RngStream::new(cfg.seed);
    let perm = rng.permutation(n);

    // Out-of-fold raw scores, pooled into one isotonic fit.
    let mut oof: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    for fold in 0..folds {
        let mut train_x = Vec::new();
        let mut train_t = Vec::new();
        let mut test_idx = Vec::new();
        for (pos, &i) in perm.iter().enumerate() {
            if pos % folds == fold {
                test_idx.push(i);
            } else {
                train_x.push(xs[i]);
                train_t.push(ts[i]);
            }
        }
        let net = train_classifier(&train_x, &train_t, cfg, cfg.seed.wrapping_add(1 + fold as u64));
        for &i in &test_idx {
            let raw = net.forward_scalar(&[xs[i]]).expect("classifier input is scalar");
            oof.push((raw, ts[i], 1.0));
        }
    }

    let classifier = train_classifier(&xs, &ts, cfg, cfg.seed);
    // The calibrator maps the *final* classifier's scores; raw scores from
    // fold models live on a comparable scale because architecture, data
    // distribution and loss match.
    let calibrator = Isotonic::fit(&oof)?;
    Ok(PropensityModel { classifier, calibrator })
}

impl PropensityModel {
    /// Calibrated estimate of `P(T=1 | x)`.
    pub fn predict(&self, x: f64) -> f64 {
        let raw = self
            .classifier
            .forward_scalar(&[x])
            .expect("classifier input is scalar");
        self.calibrator.apply(raw)
    }

    /// `P(T=arm | x)`.
    pub fn arm_probability(&self, arm: u8, x: f64) -> f64 {
        let e = self.predict(x);
        if arm == 1 {
            e
        } else {
            1.0 - e
        }
    }
}

/// Index sets of the overlap regions at truncation threshold `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRegions {
    pub c: f64,
    /// Units with `e_hat >= c` (valid for the treated-arm model).
    pub s1_indices: Vec<usize>,
    /// Units with `e_hat <= 1 - c` (valid for the control-arm model).
    pub s0_indices: Vec<usize>,
    /// Units with `c < e_hat < 1 - c`.
    pub b_indices: Vec<usize>,
}

impl OverlapRegions {
    pub fn region_for_arm(&self, arm: u8) -> &[usize] {
        if arm == 1 {
            &self.s1_indices
        } else {
            &self.s0_indices
        }
    }
}

/// Predicate form of region B: `c < e_hat(x) < 1 - c`.
pub fn in_region_b(model: &PropensityModel, c: f64, x: f64) -> bool {
    let e = model.predict(x);
    c < e && e < 1.0 - c
}

/// Deterministic partition of the observed units into overlap regions.
pub fn overlap_filter(observed: &Dataset, model: &PropensityModel, c: f64) -> Result<OverlapRegions> {
    if !(c > 0.0 && c < 0.5) {
        return Err(Error::Config(format!(
            "overlap threshold must lie in (0, 1/2), got {c}"
        )));
    }
    let mut s1 = Vec::new();
    let mut s0 = Vec::new();
    let mut b = Vec::new();
    for (i, s) in observed.iter().enumerate() {
        let e = model.predict(s.x);
        if e >= c {
            s1.push(i);
        }
        if e <= 1.0 - c {
            s0.push(i);
        }
        if e > c && e < 1.0 - c {
            b.push(i);
        }
    }
    Ok(OverlapRegions {
        c,
        s1_indices: s1,
        s0_indices: s0,
        b_indices: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Sample};
    use crate::datagen::{generate_population, true_propensity, PopulationConfig};

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let cfg = PopulationConfig {
            n,
            seed,
            ..PopulationConfig::default()
        };
        generate_population(&cfg).unwrap()
    }

    #[test]
    fn pav_is_monotone_and_matches_brute_force() {
        let mut rng = RngStream::new(21);
        for _ in 0..40 {
            let n = 2 + (rng.uniform(0.0, 7.0) as usize);
            let points: Vec<(f64, f64, f64)> = (0..n)
                .map(|i| (i as f64, rng.uniform(0.0, 1.0), 1.0))
                .collect();
            let iso = Isotonic::fit(&points).unwrap();

            // Monotone.
            for w in iso.values().windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }

            // Brute force over contiguous-block partitions.
            let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
            let mut best_sse = f64::INFINITY;
            let mut best_fit = vec![0.0; n];
            for mask in 0..(1u32 << (n - 1)) {
                let mut fit = vec![0.0; n];
                let mut start = 0;
                let mut means = Vec::new();
                let mut ok = true;
                for i in 0..n {
                    let boundary = i == n - 1 || (mask >> i) & 1 == 1;
                    if boundary {
                        let m: f64 = ys[start..=i].iter().sum::<f64>() / (i - start + 1) as f64;
                        if let Some(&prev) = means.last() {
                            if m < prev {
                                ok = false;
                                break;
                            }
                        }
                        means.push(m);
                        for v in fit.iter_mut().take(i + 1).skip(start) {
                            *v = m;
                        }
                        start = i + 1;
                    }
                }
                if !ok {
                    continue;
                }
                let sse: f64 = ys.iter().zip(&fit).map(|(y, f)| (y - f) * (y - f)).sum();
                if sse < best_sse {
                    best_sse = sse;
                    best_fit = fit;
                }
            }
            for (i, p) in points.iter().enumerate() {
                assert!(
                    (iso.apply(p.0) - best_fit[i]).abs() < 1e-9,
                    "pav disagrees with brute force at {i}"
                );
            }
        }
    }

    #[test]
    fn isotonic_clamps_outside_range() {
        let iso = Isotonic::fit(&[(0.0, 0.2, 1.0), (1.0, 0.8, 1.0)]).unwrap();
        assert_eq!(iso.apply(-5.0), 0.2);
        assert_eq!(iso.apply(5.0), 0.8);
    }

    #[test]
    fn single_arm_errors() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample::new(i as f64 / 10.0, 1, 0.0, 1.0))
            .collect();
        let ds = Dataset::new(samples, 0, DatasetMeta::default()).unwrap();
        let err = fit_propensity(&ds, 5, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate treatment"));
    }

    #[test]
    fn fitted_propensity_tracks_truth() {
        let ds = toy_dataset(3000, 13);
        let cfg = TrainConfig {
            iterations: 400,
            ..TrainConfig::default()
        };
        let model = fit_propensity(&ds, 5, &cfg).unwrap();
        let pop = PopulationConfig::default();
        let grid: Vec<f64> = (0..61).map(|i| -3.0 + 0.1 * i as f64).collect();
        let mean_err: f64 = grid
            .iter()
            .map(|&x| (model.predict(x) - true_propensity(&pop, x).unwrap()).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mean_err < 0.05, "mean |e_hat - e*| = {mean_err}");
    }

    #[test]
    fn logistic_fallback_tracks_truth() {
        let ds = toy_dataset(3000, 14);
        let cfg = TrainConfig {
            iterations: 600,
            ..TrainConfig::logistic_fallback()
        };
        let model = fit_propensity(&ds, 5, &cfg).unwrap();
        let pop = PopulationConfig::default();
        let grid: Vec<f64> = (0..61).map(|i| -3.0 + 0.1 * i as f64).collect();
        let mean_err: f64 = grid
            .iter()
            .map(|&x| (model.predict(x) - true_propensity(&pop, x).unwrap()).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mean_err < 0.05, "mean |e_hat - e*| = {mean_err}");
    }

    #[test]
    fn constant_covariate_predicts_marginal_rate() {
        let mut samples = Vec::new();
        for i in 0..300 {
            samples.push(Sample::new(1.0, u8::from(i % 10 < 3), 0.0, 1.0));
        }
        let ds = Dataset::new(samples, 0, DatasetMeta::default()).unwrap();
        let cfg = TrainConfig {
            iterations: 200,
            ..TrainConfig::logistic_fallback()
        };
        let model = fit_propensity(&ds, 5, &cfg).unwrap();
        assert!((model.predict(1.0) - 0.3).abs() < 0.05);
    }

    #[test]
    fn flipped_labels_give_complementary_predictions() {
        let ds = toy_dataset(1500, 15);
        let flipped = Dataset::new(
            ds.iter().map(|s| Sample::new(s.x, 1 - s.t, s.y1, s.y0)).collect(),
            ds.seed,
            ds.meta.clone(),
        )
        .unwrap();
        let cfg = TrainConfig {
            iterations: 500,
            ..TrainConfig::logistic_fallback()
        };
        let a = fit_propensity(&ds, 5, &cfg).unwrap();
        let b = fit_propensity(&flipped, 5, &cfg).unwrap();
        let grid: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let mean_gap: f64 = grid
            .iter()
            .map(|&x| (a.predict(x) - (1.0 - b.predict(x))).abs())
            .sum::<f64>()
            / grid.len() as f64;
        assert!(mean_gap < 0.05, "mean gap {mean_gap}");
    }

    #[test]
    fn predictions_monotone_for_positive_slope() {
        let ds = toy_dataset(3000, 16);
        let cfg = TrainConfig {
            iterations: 500,
            ..TrainConfig::logistic_fallback()
        };
        let model = fit_propensity(&ds, 5, &cfg).unwrap();
        let grid: Vec<f64> = (0..31).map(|i| -3.0 + 0.2 * i as f64).collect();
        let preds: Vec<f64> = grid.iter().map(|&x| model.predict(x)).collect();
        for w in preds.windows(2) {
            assert!(w[0] <= w[1] + 1e-9);
        }
    }

    #[test]
    fn overlap_filter_examples() {
        let ds = toy_dataset(2000, 17);
        let cfg = TrainConfig {
            iterations: 400,
            ..TrainConfig::logistic_fallback()
        };
        let model = fit_propensity(&ds, 5, &cfg).unwrap();
        let regions = overlap_filter(&ds, &model, 0.05).unwrap();
        // e* ranges over (0.2, 0.8), so most units pass.
        assert!(!regions.b_indices.is_empty());
        assert!(regions.b_indices.len() as f64 / ds.len() as f64 > 0.5);

        // Pure function: identical inputs, identical output.
        let again = overlap_filter(&ds, &model, 0.05).unwrap();
        assert_eq!(regions, again);

        assert!(overlap_filter(&ds, &model, 0.0).is_err());
        assert!(overlap_filter(&ds, &model, 0.5).is_err());
    }

    #[test]
    fn overlap_threshold_arithmetic() {
        // Hand-built model: constant raw score, calibrator with two steps.
        let classifier = {
            let mut net = Mlp::new(&[1, 1], Activation::Relu, 0);
            net.weights[0][0] = 1.0;
            net.biases[0][0] = 0.0;
            net
        };
        let calibrator = Isotonic::fit(&[(-1.0, 0.5, 1.0), (1.0, 0.8, 1.0)]).unwrap();
        let model = PropensityModel { classifier, calibrator };
        let samples = vec![Sample::new(-1.0, 0, 0.0, 1.0), Sample::new(1.0, 1, 0.0, 1.0)];
        let ds = Dataset::new(samples, 0, DatasetMeta::default()).unwrap();

        // c = 0.49: unit with e_hat = 0.8 > 1 - c is excluded from s0.
        let r = overlap_filter(&ds, &model, 0.49).unwrap();
        assert_eq!(r.s0_indices, vec![0]);
        assert_eq!(r.s1_indices, vec![0, 1]);
        assert_eq!(r.b_indices, vec![0]);

        // Near-constant e_hat = 0.5 with a wide band keeps everything.
        let ds2 = Dataset::new(
            vec![Sample::new(-1.0, 0, 0.0, 1.0), Sample::new(-1.0, 1, 0.0, 1.0)],
            0,
            DatasetMeta::default(),
        )
        .unwrap();
        let r2 = overlap_filter(&ds2, &model, 0.49).unwrap();
        assert_eq!(r2.b_indices, vec![0, 1]);
    }
}
