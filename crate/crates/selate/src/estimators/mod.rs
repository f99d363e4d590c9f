//! ATE estimators and the plug-in assembly over the overlap region.

pub mod aipw;
pub mod gmm;
pub mod heckman;
pub mod ipw;
pub mod mle;
pub mod poly;
pub mod score;

pub use aipw::aipw_ate;
pub use gmm::{gmm_weighted_em, GmmComponent, GmmFit, GmmParams};
pub use heckman::{heckman_ate, inverse_mills, probit_fit, HeckmanFit, ProbitFit};
pub use ipw::ipw_arm_mean;
pub use mle::{fit_mle, fit_mle_with_beta, BetaModel, MleConfig, MleFit, BETA_MAX, BETA_MIN};
pub use poly::{polynomial_fit, polynomial_mu};
pub use score::{fit_score_model, score_conditional_mean, ScoreModel, ScoreTrainConfig};

use serde::{Deserialize, Serialize};

use crate::data::{AteEstimate, Dataset, Method};
use crate::propensity::{OverlapRegions, PropensityModel};
use crate::{Error, Result};

/// Outcome integration grid for the score models and the beta normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            y_min: -10.0,
            y_max: 15.0,
            points: 400,
        }
    }
}

/// Fitted conditional-outcome models consumed by [`estimate_ate`].
pub enum Fitted {
    Poly { coeffs: [Vec<f64>; 2] },
    Mle(MleFit),
    Score(ScoreModel),
}

fn missing(method: Method, what: &str) -> Error {
    Error::Fit(format!("method {method} needs {what}"))
}

/// Assemble the ATE over region-B units: the weighted average of
/// `mu_hat_1(x_i) - mu_hat_0(x_i)` with weights `1 / beta_hat(x_i, y_i, t_i)`
/// for the corrected methods and unit weights otherwise. The IPW method
/// instead returns the difference of the per-arm weighted means.
pub fn estimate_ate(
    method: Method,
    observed: &Dataset,
    prop: &PropensityModel,
    regions: &OverlapRegions,
    fitted: Option<&Fitted>,
) -> Result<AteEstimate> {
    match method {
        Method::Ipw => {
            let m1 = ipw_arm_mean(observed, prop, 1, regions)?;
            let m0 = ipw_arm_mean(observed, prop, 0, regions)?;
            let n_used = regions
                .s1_indices
                .iter()
                .filter(|&&i| observed.samples()[i].t == 1)
                .count()
                + regions
                    .s0_indices
                    .iter()
                    .filter(|&&i| observed.samples()[i].t == 0)
                    .count();
            Ok(AteEstimate::new(Method::Ipw, m1 - m0, n_used)
                .with_diag("arm1_mean", m1)
                .with_diag("arm0_mean", m0))
        }
        Method::Heckman | Method::Aipw | Method::AipwOracle => Err(Error::Fit(format!(
            "method {method} is not assembled over region B; call its dedicated estimator"
        ))),
        _ => {
            let fitted = fitted.ok_or_else(|| missing(method, "a fitted model"))?;
            let (mu, beta): (Box<dyn Fn(u8, f64) -> Result<f64>>, Option<BetaModel>) =
                match (method, fitted) {
                    (Method::Poly, Fitted::Poly { coeffs }) => {
                        let c = coeffs.clone();
                        (
                            Box::new(move |arm, x| Ok(polynomial_mu(&c[arm as usize], x))),
                            None,
                        )
                    }
                    (Method::Mle, Fitted::Mle(fit)) => {
                        let models = fit.arm_models.clone();
                        (
                            Box::new(move |arm, x| Ok(models[arm as usize].conditional_mean(x))),
                            None,
                        )
                    }
                    (Method::MleBeta, Fitted::Mle(fit)) => {
                        let models = fit.arm_models.clone();
                        let beta = fit
                            .beta
                            .clone()
                            .ok_or_else(|| missing(method, "a fitted beta model"))?;
                        (
                            Box::new(move |arm, x| Ok(models[arm as usize].conditional_mean(x))),
                            Some(beta),
                        )
                    }
                    (Method::Sm, Fitted::Score(model)) => {
                        let m = model.clone();
                        (
                            Box::new(move |arm, x| {
                                score_conditional_mean(&m, arm, x).map(|(v, _)| v)
                            }),
                            None,
                        )
                    }
                    (Method::SmBeta, Fitted::Score(model)) => {
                        let m = model.clone();
                        let beta = model
                            .beta
                            .clone()
                            .ok_or_else(|| missing(method, "a fitted beta model"))?;
                        (
                            Box::new(move |arm, x| {
                                score_conditional_mean(&m, arm, x).map(|(v, _)| v)
                            }),
                            Some(beta),
                        )
                    }
                    _ => return Err(missing(method, "a fitted model of the matching kind")),
                };

            if regions.b_indices.is_empty() {
                return Err(Error::Data("region B is empty".into()));
            }
            let samples = observed.samples();
            let mut num = 0.0;
            let mut den = 0.0;
            let mut clamped = 0usize;
            for &i in &regions.b_indices {
                let s = &samples[i];
                let w = match &beta {
                    Some(b) => {
                        let (w, was_clamped) = b.weight(s.x, s.y, s.t);
                        if was_clamped {
                            clamped += 1;
                        }
                        w
                    }
                    None => 1.0,
                };
                num += w * (mu(1, s.x)? - mu(0, s.x)?);
                den += w;
            }
            let mut est = AteEstimate::new(method, num / den, regions.b_indices.len()).with_diag(
                "region_b_fraction",
                regions.b_indices.len() as f64 / observed.len() as f64,
            );
            if beta.is_some() {
                est = est.with_diag("beta_weights_clamped", clamped as f64);
            }
            Ok(est)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Sample};
    use crate::nnet::{Activation, Mlp};
    use crate::propensity::Isotonic;

    fn constant_mean_gmm(mean_y: f64) -> GmmParams {
        GmmParams {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: [0.0, mean_y],
                cov: [[1.0, 0.0], [0.0, 1.0]],
            }],
        }
    }

    fn dummy_prop() -> PropensityModel {
        PropensityModel {
            classifier: Mlp::new(&[1, 1], Activation::Relu, 0),
            calibrator: Isotonic::fit(&[(0.0, 0.5, 1.0)]).unwrap(),
        }
    }

    fn toy_observed() -> Dataset {
        Dataset::new(
            vec![
                Sample::new(-1.0, 0, 1.0, 3.0),
                Sample::new(0.0, 1, 1.0, 3.0),
                Sample::new(1.0, 1, 1.0, 3.0),
            ],
            0,
            DatasetMeta::default(),
        )
        .unwrap()
    }

    fn full_regions(n: usize) -> OverlapRegions {
        OverlapRegions {
            c: 0.05,
            s1_indices: (0..n).collect(),
            s0_indices: (0..n).collect(),
            b_indices: (0..n).collect(),
        }
    }

    #[test]
    fn constant_effect_with_unit_beta() {
        let observed = toy_observed();
        let fit = MleFit {
            arm_models: [constant_mean_gmm(1.0), constant_mean_gmm(3.0)],
            beta: Some(BetaModel::new(0)),
            em_traces: vec![],
            beta_clamped: false,
            final_objective: 0.0,
        };
        let est = estimate_ate(
            Method::MleBeta,
            &observed,
            &dummy_prop(),
            &full_regions(3),
            Some(&Fitted::Mle(fit)),
        )
        .unwrap();
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn concentrated_weights_pick_one_unit() {
        // raw = 4y: the y = 0 unit carries weight 1, the y = 5 units ~2e-9.
        let mut net = Mlp::new(&[3, 1], Activation::Tanh, 0);
        net.weights[0] = vec![0.0, 4.0, 0.0];
        net.biases[0] = vec![0.0];
        let beta = BetaModel { net };

        let observed = Dataset::new(
            vec![
                Sample::new(-1.0, 0, 0.0, 5.0),
                Sample::new(0.5, 1, 0.0, 5.0),
                Sample::new(1.0, 1, 0.0, 5.0),
            ],
            0,
            DatasetMeta::default(),
        )
        .unwrap();

        let slope = GmmParams {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: [0.0, 0.0],
                cov: [[1.0, 0.9], [0.9, 1.0]],
            }],
        };
        let fit = MleFit {
            arm_models: [constant_mean_gmm(0.0), slope.clone()],
            beta: Some(beta),
            em_traces: vec![],
            beta_clamped: false,
            final_objective: 0.0,
        };
        let est = estimate_ate(
            Method::MleBeta,
            &observed,
            &dummy_prop(),
            &full_regions(3),
            Some(&Fitted::Mle(fit)),
        )
        .unwrap();
        // The heavy units' weights hit the 1/BETA_MAX clamp, leaving a ~2e-4
        // contamination of the concentrated estimate.
        let expected = slope.conditional_mean(-1.0) - 0.0;
        assert!((est.value - expected).abs() < 2e-3, "{} vs {expected}", est.value);
    }

    #[test]
    fn unit_weights_equal_plain_plugin() {
        let observed = toy_observed();
        let coeffs = [vec![1.0, 0.5, 0.0, 0.0], vec![2.0, -0.5, 0.0, 0.0]];
        let est = estimate_ate(
            Method::Poly,
            &observed,
            &dummy_prop(),
            &full_regions(3),
            Some(&Fitted::Poly {
                coeffs: coeffs.clone(),
            }),
        )
        .unwrap();
        let manual: f64 = observed
            .iter()
            .map(|s| polynomial_mu(&coeffs[1], s.x) - polynomial_mu(&coeffs[0], s.x))
            .sum::<f64>()
            / 3.0;
        assert!((est.value - manual).abs() < 1e-12);
    }

    #[test]
    fn missing_model_errors_name_the_method() {
        let observed = toy_observed();
        let err = estimate_ate(
            Method::SmBeta,
            &observed,
            &dummy_prop(),
            &full_regions(3),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("sm_beta"));
    }
}
