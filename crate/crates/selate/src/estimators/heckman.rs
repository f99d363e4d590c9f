//! Classical two-step selection correction: probit selection equation,
//! then per-arm outcome regressions with an inverse-Mills term.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{AteEstimate, Dataset, Method};
use crate::numeric::least_squares;
use crate::{Error, Result};

/// `phi(z) / Phi(z)`, with the asymptotic expansion far in the left tail
/// where the CDF underflows.
pub fn inverse_mills(z: f64) -> f64 {
    if z < -10.0 {
        return -z - 1.0 / z + 2.0 / (z * z * z);
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    n.pdf(z) / n.cdf(z).max(1e-300)
}

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub coeffs: Vec<f64>,
    /// Log-likelihood per Newton iteration; non-decreasing by step halving.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

fn probit_loglik(design: &[f64], p: usize, s: &[f64], coeffs: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = s.len();
    let mut ll = 0.0;
    for i in 0..n {
        let z: f64 = (0..p).map(|j| design[i * p + j] * coeffs[j]).sum();
        let cdf = normal.cdf(z).clamp(1e-12, 1.0 - 1e-12);
        ll += if s[i] > 0.5 { cdf.ln() } else { (1.0 - cdf).ln() };
    }
    ll
}

/// Probit of `s` on `design` (row-major, `p` columns) by Fisher scoring with
/// step halving, so the log-likelihood never decreases.
pub fn probit_fit(design: &[f64], p: usize, s: &[f64], max_iter: usize) -> Result<ProbitFit> {
    let n = s.len();
    assert_eq!(design.len(), n * p);
    if s.iter().all(|&v| v > 0.5) || s.iter().all(|&v| v < 0.5) {
        return Err(Error::Fit(
            "probit needs both selected and non-selected units".into(),
        ));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut coeffs = vec![0.0; p];
    let mut ll = probit_loglik(design, p, s, &coeffs);
    let mut trace = vec![ll];
    let mut converged = false;

    for _ in 0..max_iter {
        // Fisher scoring: score and expected information.
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for i in 0..n {
            let row = &design[i * p..(i + 1) * p];
            let z: f64 = row.iter().zip(&coeffs).map(|(x, c)| x * c).sum();
            let pdf = normal.pdf(z);
            let cdf = normal.cdf(z).clamp(1e-10, 1.0 - 1e-10);
            let resid = s[i] - cdf;
            let w = pdf * pdf / (cdf * (1.0 - cdf));
            let g = pdf * resid / (cdf * (1.0 - cdf));
            for j in 0..p {
                score[j] += g * row[j];
                for k in 0..p {
                    info[j * p + k] += w * row[j] * row[k];
                }
            }
        }
        // Solve info * step = score.
        let step = least_squares(&info, p, p, &score)
            .map_err(|_| Error::Fit("probit information matrix is singular".into()))?;

        // Halve the step until the log-likelihood does not decrease.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = coeffs
                .iter()
                .zip(&step)
                .map(|(c, d)| c + scale * d)
                .collect();
            let cand_ll = probit_loglik(design, p, s, &cand);
            if cand_ll >= ll - 1e-12 {
                coeffs = cand;
                let delta = cand_ll - ll;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                if delta.abs() < 1e-10 && step.iter().map(|d| d * d).sum::<f64>().sqrt() * scale < 1e-8 {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            converged = true; // no uphill direction left
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "probit did not converge in {max_iter} Newton steps"
        )));
    }
    Ok(ProbitFit {
        coeffs,
        loglik_trace: trace,
        converged,
    })
}

/// Two-step fit: probit selection coefficients plus per-arm outcome
/// coefficients `[intercept, slope, mills]`.
#[derive(Debug, Clone)]
pub struct HeckmanFit {
    pub probit: ProbitFit,
    pub outcome_coeffs: [Vec<f64>; 2],
}

/// Heckman correction. `selection_frame` supplies `(x, t, selected)` rows
/// including non-selected units; when it is merely a proxy for the true
/// selection frame, set `proxy` so the estimate is labelled.
pub fn heckman_ate(
    observed: &Dataset,
    selection_frame: &Dataset,
    proxy: bool,
) -> Result<AteEstimate> {
    if !observed.has_both_arms() {
        return Err(Error::Data("heckman needs both treatment arms".into()));
    }
    // Step 1: probit of the selection flag on [1, x, t].
    let n = selection_frame.len();
    let mut design = Vec::with_capacity(n * 3);
    let mut flags = Vec::with_capacity(n);
    for s in selection_frame.iter() {
        design.extend_from_slice(&[1.0, s.x, f64::from(s.t)]);
        flags.push(if s.selected { 1.0 } else { 0.0 });
    }
    let probit = probit_fit(&design, 3, &flags, 100)?;

    // Step 2: per-arm regression of y on [1, x, mills(z)]. Without an
    // exclusion restriction the Mills column is identified only through its
    // curvature in x; when it is numerically collinear with [1, x] (selection
    // uninformative) the column is dropped so the fit degrades to OLS instead
    // of exploding.
    let mut outcome_coeffs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut mills_dropped = 0usize;
    for arm in 0..2u8 {
        let rows: Vec<_> = observed.iter().filter(|s| s.t == arm).collect();
        let n_arm = rows.len();
        let mut base = Vec::with_capacity(n_arm * 2);
        let mut mills = Vec::with_capacity(n_arm);
        let mut y = Vec::with_capacity(n_arm);
        for s in &rows {
            let z = probit.coeffs[0] + probit.coeffs[1] * s.x + probit.coeffs[2] * f64::from(s.t);
            base.extend_from_slice(&[1.0, s.x]);
            mills.push(inverse_mills(z));
            y.push(s.y);
        }
        let proj = least_squares(&base, n_arm, 2, &mills)?;
        let mean_mills = mills.iter().sum::<f64>() / n_arm as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for (i, m) in mills.iter().enumerate() {
            let fitted = proj[0] + proj[1] * base[i * 2 + 1];
            ss_res += (m - fitted) * (m - fitted);
            ss_tot += (m - mean_mills) * (m - mean_mills);
        }
        let collinear = ss_tot <= 0.0 || ss_res / ss_tot < 1e-4;
        if collinear {
            mills_dropped += 1;
            let mut coeffs = least_squares(&base, n_arm, 2, &y)?;
            coeffs.push(0.0);
            outcome_coeffs[arm as usize] = coeffs;
        } else {
            let mut design = Vec::with_capacity(n_arm * 3);
            for (i, m) in mills.iter().enumerate() {
                design.extend_from_slice(&[1.0, base[i * 2 + 1], *m]);
            }
            outcome_coeffs[arm as usize] = least_squares(&design, n_arm, 3, &y)?;
        }
    }

    // ATE from the arm intercept/slope difference averaged over observed x,
    // dropping the Mills correction term.
    let mu = |arm: usize, x: f64| outcome_coeffs[arm][0] + outcome_coeffs[arm][1] * x;
    let tau = observed
        .iter()
        .map(|s| mu(1, s.x) - mu(0, s.x))
        .sum::<f64>()
        / observed.len() as f64;

    let mut est = AteEstimate::new(Method::Heckman, tau, observed.len())
        .with_diag("probit_iterations", (probit.loglik_trace.len() - 1) as f64)
        .with_diag("mills_coef_arm0", outcome_coeffs[0][2])
        .with_diag("mills_coef_arm1", outcome_coeffs[1][2])
        .with_diag("mills_columns_dropped", mills_dropped as f64);
    if proxy {
        est = est.with_diag("proxy_selection", 1.0);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetMeta, Sample};
    use crate::rng::RngStream;

    #[test]
    fn inverse_mills_at_zero() {
        assert!((inverse_mills(0.0) - 0.7979).abs() < 1e-4);
    }

    #[test]
    fn inverse_mills_asymptotic_matches_exact() {
        // The asymptotic branch agrees with the direct ratio where the
        // normal CDF is still representable.
        let n = Normal::new(0.0, 1.0).unwrap();
        for z in [-10.5, -12.0, -15.0] {
            let exact = n.pdf(z) / n.cdf(z);
            let asym = inverse_mills(z);
            assert!((asym - exact).abs() < 1e-4, "z={z}: {asym} vs {exact}");
        }
    }

    #[test]
    fn probit_recovers_coefficients() {
        let mut rng = RngStream::new(41);
        let n = 4000;
        let mut design = Vec::new();
        let mut s = Vec::new();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..n {
            let x = rng.uniform(-2.0, 2.0);
            design.extend_from_slice(&[1.0, x]);
            let p = normal.cdf(0.3 + 0.8 * x);
            s.push(if rng.bernoulli(p) { 1.0 } else { 0.0 });
        }
        let fit = probit_fit(&design, 2, &s, 100).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!((fit.coeffs[0] - 0.3).abs() < 0.1, "{:?}", fit.coeffs);
        assert!((fit.coeffs[1] - 0.8).abs() < 0.1, "{:?}", fit.coeffs);
    }

    #[test]
    fn probit_separable_data_errors() {
        let mut design = Vec::new();
        let mut s = Vec::new();
        for i in 0..40 {
            let x = i as f64 / 10.0 - 2.0;
            design.extend_from_slice(&[1.0, x]);
            s.push(if x > 0.0 { 1.0 } else { 0.0 });
        }
        assert!(probit_fit(&design, 2, &s, 100).is_err());
    }

    #[test]
    fn uninformative_selection_matches_ols() {
        // Linear Gaussian outcomes, selection by a fair coin: the Mills term
        // carries no signal and the corrected fit matches plain OLS.
        let mut rng = RngStream::new(42);
        let n = 4000;
        let mut samples = Vec::new();
        for _ in 0..n {
            let x = rng.uniform(-2.0, 2.0);
            let t = u8::from(rng.bernoulli(0.5));
            let y0 = 1.0 + 0.5 * x + rng.normal(0.0, 0.3);
            let y1 = 2.5 - 0.2 * x + rng.normal(0.0, 0.3);
            let mut s = Sample::new(x, t, y0, y1);
            s.selected = rng.bernoulli(0.5);
            samples.push(s);
        }
        let frame = Dataset::new(samples.clone(), 0, DatasetMeta::default()).unwrap();
        let observed = frame.filtered(|s| s.selected);

        let est = heckman_ate(&observed, &frame, false).unwrap();

        // Plain OLS ATE on the observed data.
        let fit_arm = |arm: u8| {
            let rows: Vec<_> = observed.iter().filter(|s| s.t == arm).collect();
            let mut x = Vec::new();
            let mut y = Vec::new();
            for s in &rows {
                x.extend_from_slice(&[1.0, s.x]);
                y.push(s.y);
            }
            least_squares(&x, rows.len(), 2, &y).unwrap()
        };
        let b0 = fit_arm(0);
        let b1 = fit_arm(1);
        let ols_tau = observed
            .iter()
            .map(|s| (b1[0] + b1[1] * s.x) - (b0[0] + b0[1] * s.x))
            .sum::<f64>()
            / observed.len() as f64;
        assert!((est.value - ols_tau).abs() < 0.1, "{} vs {ols_tau}", est.value);
    }
}
