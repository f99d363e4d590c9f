//! Augmented inverse propensity weighting (doubly robust score).

use crate::data::{AteEstimate, Dataset, Method};
use crate::estimators::poly::polynomial_mu;
use crate::{Error, Result};

/// Propensity clipping bounds for the AIPW score.
const E_CLIP: (f64, f64) = (0.01, 0.99);

/// Standard doubly robust estimate over `working` (the selected data, or the
/// full population for the oracle variant). `e_hat` supplies the propensity
/// and outcome models are per-arm polynomial coefficient vectors.
pub fn aipw_ate(
    working: &Dataset,
    e_hat: &dyn Fn(f64) -> f64,
    outcome_coeffs: &[Vec<f64>; 2],
    oracle: bool,
) -> Result<AteEstimate> {
    if working.is_empty() {
        return Err(Error::Data("aipw needs a nonempty dataset".into()));
    }
    let mut sum = 0.0;
    let mut clipped = 0usize;
    for s in working.iter() {
        let mut e = e_hat(s.x);
        if e < E_CLIP.0 || e > E_CLIP.1 {
            e = e.clamp(E_CLIP.0, E_CLIP.1);
            clipped += 1;
        }
        let m1 = polynomial_mu(&outcome_coeffs[1], s.x);
        let m0 = polynomial_mu(&outcome_coeffs[0], s.x);
        let t = f64::from(s.t);
        sum += m1 - m0 + t * (s.y - m1) / e - (1.0 - t) * (s.y - m0) / (1.0 - e);
    }
    let method = if oracle { Method::AipwOracle } else { Method::Aipw };
    Ok(AteEstimate::new(method, sum / working.len() as f64, working.len())
        .with_diag("clipped_propensities", clipped as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_population, oracle_ate, PopulationConfig};
    use crate::estimators::poly::polynomial_fit;

    #[test]
    fn double_robustness_with_correct_outcome_model() {
        // Correct outcome model + arbitrary propensity in (0.1, 0.9) on
        // unselected data keeps the error small.
        let cfg = PopulationConfig {
            n: 20_000,
            seed: 51,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let mut coeffs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for arm in 0..2u8 {
            let rows: Vec<_> = ds.iter().filter(|s| s.t == arm).collect();
            let xs: Vec<f64> = rows.iter().map(|s| s.x).collect();
            let ys: Vec<f64> = rows.iter().map(|s| s.y).collect();
            coeffs[arm as usize] = polynomial_fit(&xs, &ys, 3).unwrap();
        }
        // Deliberately wrong propensity, bounded inside (0.1, 0.9).
        let wrong = |x: f64| 0.35 + 0.05 * x;
        let est = aipw_ate(&ds, &wrong, &coeffs, false).unwrap();
        let tau = oracle_ate(&cfg, 200_000).unwrap();
        assert!((est.value - tau).abs() < 0.1, "err {}", est.value - tau);
    }

    #[test]
    fn clipping_is_counted() {
        let cfg = PopulationConfig {
            n: 200,
            seed: 52,
            ..PopulationConfig::default()
        };
        let ds = generate_population(&cfg).unwrap();
        let coeffs = [vec![0.0; 4], vec![0.0; 4]];
        let est = aipw_ate(&ds, &|_| 0.999, &coeffs, false).unwrap();
        assert_eq!(est.diagnostics["clipped_propensities"], 200.0);
    }
}
