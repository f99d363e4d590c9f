//! Bivariate Gaussian mixtures fitted by (weighted) expectation-maximization,
//! with the analytic conditional mean used by the MLE estimators.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest admissible covariance eigenvalue.
pub const COV_EIGEN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Symmetric 2x2 covariance `[[xx, xy], [xy, yy]]`.
    pub cov: [[f64; 2]; 2],
}

impl GmmComponent {
    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[0][1]
    }

    /// Joint log-density at `(x, y)`.
    pub fn log_pdf(&self, x: f64, y: f64) -> f64 {
        let det = self.det();
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        let quad = (self.cov[1][1] * dx * dx - 2.0 * self.cov[0][1] * dx * dy
            + self.cov[0][0] * dy * dy)
            / det;
        -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
    }

    /// Conditional mean of y given x: the component regression line.
    pub fn conditional_mean(&self, x: f64) -> f64 {
        self.mean[1] + self.cov[0][1] / self.cov[0][0] * (x - self.mean[0])
    }

    /// Conditional variance of y given x.
    pub fn conditional_var(&self) -> f64 {
        (self.cov[1][1] - self.cov[0][1] * self.cov[0][1] / self.cov[0][0]).max(COV_EIGEN_FLOOR)
    }

    /// Log marginal density of x.
    pub fn log_marginal_x(&self, x: f64) -> f64 {
        let v = self.cov[0][0];
        let d = x - self.mean[0];
        -0.5 * d * d / v - 0.5 * v.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Mixture parameters; weights sum to one and covariances stay SPD via an
/// eigenvalue floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub components: Vec<GmmComponent>,
}

/// Fit result with the weighted log-likelihood trace (one entry per
/// iteration, non-decreasing up to 1e-9 slack).
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmParams,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

fn floor_covariance(cov: &mut [[f64; 2]; 2]) {
    // Analytic eigenvalues of the symmetric 2x2 matrix.
    let half_tr = 0.5 * (cov[0][0] + cov[1][1]);
    let disc = (0.25 * (cov[0][0] - cov[1][1]).powi(2) + cov[0][1] * cov[0][1]).sqrt();
    let lambda_min = half_tr - disc;
    if lambda_min < COV_EIGEN_FLOOR {
        let shift = COV_EIGEN_FLOOR - lambda_min;
        cov[0][0] += shift;
        cov[1][1] += shift;
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl GmmParams {
    /// Weighted log-likelihood of `points` under the mixture.
    pub fn weighted_loglik(&self, points: &[(f64, f64)], weights: &[f64]) -> f64 {
        points
            .iter()
            .zip(weights)
            .map(|(&(x, y), &w)| {
                let lps: Vec<f64> = self
                    .components
                    .iter()
                    .map(|c| c.weight.ln() + c.log_pdf(x, y))
                    .collect();
                w * log_sum_exp(&lps)
            })
            .sum()
    }

    /// Conditional mean `E[y | x]`: component regression lines averaged by
    /// the posterior responsibility of each component given `x`.
    pub fn conditional_mean(&self, x: f64) -> f64 {
        self.conditional_mean_flagged(x).0
    }

    /// Second element flags the underflow fallback (nearest component).
    pub fn conditional_mean_flagged(&self, x: f64) -> (f64, bool) {
        let logw: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_marginal_x(x))
            .collect();
        let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m < -700.0 {
            // Every marginal underflows; fall back to the component whose
            // x-marginal is closest in standardized distance.
            let k = self
                .components
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (x - a.mean[0]).abs() / a.cov[0][0].sqrt();
                    let db = (x - b.mean[0]).abs() / b.cov[0][0].sqrt();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(k, _)| k)
                .unwrap();
            return (self.components[k].conditional_mean(x), true);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, lw) in self.components.iter().zip(&logw) {
            let w = (lw - m).exp();
            num += w * c.conditional_mean(x);
            den += w;
        }
        (num / den, false)
    }

    /// Conditional density `p(y | x)` of the mixture.
    pub fn conditional_density(&self, x: f64, y: f64) -> f64 {
        let logw: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_marginal_x(x))
            .collect();
        let lse = log_sum_exp(&logw);
        let mut dens = 0.0;
        for (c, lw) in self.components.iter().zip(&logw) {
            let resp = (lw - lse).exp();
            let m = c.conditional_mean(x);
            let v = c.conditional_var();
            let d = y - m;
            dens += resp * (-0.5 * d * d / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        dens
    }
}

/// Deterministic initialization: partition points into `k` groups by x-rank
/// and take per-group moments.
fn init_components(points: &[(f64, f64)], k: usize) -> Vec<GmmComponent> {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].0.partial_cmp(&points[b].0).unwrap());
    let mut components = Vec::with_capacity(k);
    for g in 0..k {
        let lo = g * n / k;
        let hi = ((g + 1) * n / k).max(lo + 1);
        let group: Vec<(f64, f64)> = order[lo..hi.min(n)].iter().map(|&i| points[i]).collect();
        let gn = group.len() as f64;
        let mx = group.iter().map(|p| p.0).sum::<f64>() / gn;
        let my = group.iter().map(|p| p.1).sum::<f64>() / gn;
        let mut cov = [[0.0; 2]; 2];
        for &(x, y) in &group {
            cov[0][0] += (x - mx) * (x - mx);
            cov[0][1] += (x - mx) * (y - my);
            cov[1][1] += (y - my) * (y - my);
        }
        cov[0][0] /= gn;
        cov[0][1] /= gn;
        cov[1][1] /= gn;
        cov[1][0] = cov[0][1];
        // Widen degenerate groups instead of trusting tiny moments.
        cov[0][0] = cov[0][0].max(1e-3);
        cov[1][1] = cov[1][1].max(1e-3);
        floor_covariance(&mut cov);
        components.push(GmmComponent {
            weight: 1.0 / k as f64,
            mean: [mx, my],
            cov,
        });
    }
    components
}

/// Weighted EM: local maximizer of `sum_i w_i log p(z_i)`.
///
/// The weighted log-likelihood is non-decreasing across iterations (up to
/// floating-point slack); the trace is returned for assertion in tests.
pub fn gmm_weighted_em(
    points: &[(f64, f64)],
    weights: &[f64],
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<GmmFit> {
    let n = points.len();
    if k == 0 {
        return Err(Error::Config("component count must be positive".into()));
    }
    if k > n {
        return Err(Error::Fit(format!("cannot fit {k} components to {n} points")));
    }
    if weights.len() != n {
        return Err(Error::Fit("weights length must match points".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Fit("weights must be positive".into()));
    }

    let mut components = init_components(points, k);
    let total_w: f64 = weights.iter().sum();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut resp = vec![0.0f64; n * k];

    for _ in 0..max_iter {
        // E-step: responsibilities and the weighted log-likelihood.
        let mut ll = 0.0;
        for (i, (&(x, y), &w)) in points.iter().zip(weights).enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (c, r) in components.iter().zip(row.iter_mut()) {
                *r = c.weight.ln() + c.log_pdf(x, y);
            }
            let lse = log_sum_exp(row);
            ll += w * lse;
            for r in row.iter_mut() {
                *r = (*r - lse).exp();
            }
        }
        trace.push(ll);
        if trace.len() >= 2 {
            let delta = ll - trace[trace.len() - 2];
            if delta.abs() <= tol * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        }

        // M-step with sample weights.
        for c in 0..k {
            let mut nk = 0.0;
            let mut mx = 0.0;
            let mut my = 0.0;
            for (i, (&(x, y), &w)) in points.iter().zip(weights).enumerate() {
                let rw = w * resp[i * k + c];
                nk += rw;
                mx += rw * x;
                my += rw * y;
            }
            if nk < 1e-12 * total_w {
                // Starved component: keep its parameters, shrink its weight.
                components[c].weight = 1e-10;
                continue;
            }
            mx /= nk;
            my /= nk;
            let mut cov = [[0.0; 2]; 2];
            for (i, (&(x, y), &w)) in points.iter().zip(weights).enumerate() {
                let rw = w * resp[i * k + c];
                cov[0][0] += rw * (x - mx) * (x - mx);
                cov[0][1] += rw * (x - mx) * (y - my);
                cov[1][1] += rw * (y - my) * (y - my);
            }
            cov[0][0] /= nk;
            cov[0][1] /= nk;
            cov[1][1] /= nk;
            cov[1][0] = cov[0][1];
            floor_covariance(&mut cov);
            components[c] = GmmComponent {
                weight: nk / total_w,
                mean: [mx, my],
                cov,
            };
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= wsum;
        }
    }

    Ok(GmmFit {
        params: GmmParams { components },
        loglik_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson_panels;
    use crate::rng::RngStream;

    pub(crate) fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }

    fn sample_gaussian(rng: &mut RngStream, mean: [f64; 2], sd: [f64; 2], rho: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let z1 = rng.standard_normal();
                let z2 = rng.standard_normal();
                let x = mean[0] + sd[0] * z1;
                let y = mean[1] + sd[1] * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
                (x, y)
            })
            .collect()
    }

    #[test]
    fn single_component_recovers_sample_moments() {
        let mut rng = RngStream::new(31);
        let pts = sample_gaussian(&mut rng, [1.0, -2.0], [1.5, 0.7], 0.4, 400);
        let w = vec![1.0; pts.len()];
        let fit = gmm_weighted_em(&pts, &w, 1, 1e-6, 500).unwrap();
        assert_monotone(&fit.loglik_trace);
        let c = &fit.params.components[0];

        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>() / n;
        let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let syy = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum::<f64>() / n;
        assert!((c.mean[0] - mx).abs() < 1e-8);
        assert!((c.mean[1] - my).abs() < 1e-8);
        assert!((c.cov[0][0] - sxx).abs() < 1e-8);
        assert!((c.cov[0][1] - sxy).abs() < 1e-8);
        assert!((c.cov[1][1] - syy).abs() < 1e-8);
    }

    #[test]
    fn duplicated_point_equals_double_weight() {
        let mut rng = RngStream::new(32);
        let mut pts = sample_gaussian(&mut rng, [0.0, 0.0], [1.0, 1.0], 0.2, 60);
        let special = (2.5, 2.0);
        pts.push(special);

        let mut dup = pts.clone();
        dup.push(special);
        let w_dup = vec![1.0; dup.len()];
        let fit_dup = gmm_weighted_em(&dup, &w_dup, 2, 1e-9, 800).unwrap();

        let mut w = vec![1.0; pts.len()];
        *w.last_mut().unwrap() = 2.0;
        let fit_w = gmm_weighted_em(&pts, &w, 2, 1e-9, 800).unwrap();

        assert_monotone(&fit_dup.loglik_trace);
        assert_monotone(&fit_w.loglik_trace);
        for (a, b) in fit_dup.params.components.iter().zip(&fit_w.params.components) {
            assert!((a.weight / (w_dup.len() as f64) - b.weight / (w.iter().sum::<f64>())).abs() < 1e-4);
            assert!((a.mean[0] - b.mean[0]).abs() < 1e-4);
            assert!((a.mean[1] - b.mean[1]).abs() < 1e-4);
        }
    }

    #[test]
    fn two_separated_clusters() {
        let mut rng = RngStream::new(33);
        let mut pts = sample_gaussian(&mut rng, [-5.0, -5.0], [0.5, 0.5], 0.0, 150);
        pts.extend(sample_gaussian(&mut rng, [5.0, 5.0], [0.5, 0.5], 0.0, 150));
        let w = vec![1.0; pts.len()];
        let fit = gmm_weighted_em(&pts, &w, 2, 1e-8, 500).unwrap();
        assert_monotone(&fit.loglik_trace);

        let mut means: Vec<f64> = fit.params.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 < 0.0).collect();
        let hi: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0 > 0.0).collect();
        let m_lo = lo.iter().map(|p| p.0).sum::<f64>() / lo.len() as f64;
        let m_hi = hi.iter().map(|p| p.0).sum::<f64>() / hi.len() as f64;
        assert!((means[0] - m_lo).abs() < 1e-3);
        assert!((means[1] - m_hi).abs() < 1e-3);
        for c in &fit.params.components {
            assert!((c.weight - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let pts = vec![(0.0, 0.0), (1.0, 1.0)];
        assert!(gmm_weighted_em(&pts, &[1.0, 1.0], 3, 1e-6, 10).is_err());
        assert!(gmm_weighted_em(&pts, &[1.0, 0.0], 1, 1e-6, 10).is_err());
        assert!(gmm_weighted_em(&pts, &[1.0, -1.0], 1, 1e-6, 10).is_err());
    }

    #[test]
    fn single_component_conditional_mean_is_regression_line() {
        let c = GmmComponent {
            weight: 1.0,
            mean: [1.0, 2.0],
            cov: [[2.0, 0.6], [0.6, 1.0]],
        };
        let gmm = GmmParams {
            components: vec![c.clone()],
        };
        for x in [-2.0, 0.0, 3.0] {
            let expected = 2.0 + 0.6 / 2.0 * (x - 1.0);
            assert!((gmm.conditional_mean(x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_mean_matches_quadrature() {
        let mut rng = RngStream::new(34);
        for _ in 0..50 {
            let k = 1 + (rng.uniform(0.0, 3.0) as usize);
            let components: Vec<GmmComponent> = (0..k)
                .map(|_| {
                    let sx = rng.uniform(0.4, 2.0);
                    let sy = rng.uniform(0.4, 2.0);
                    let rho = rng.uniform(-0.7, 0.7);
                    GmmComponent {
                        weight: rng.uniform(0.2, 1.0),
                        mean: [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)],
                        cov: [[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]],
                    }
                })
                .collect();
            let total: f64 = components.iter().map(|c| c.weight).sum();
            let gmm = GmmParams {
                components: components
                    .into_iter()
                    .map(|mut c| {
                        c.weight /= total;
                        c
                    })
                    .collect(),
            };
            for _ in 0..20 {
                let x = rng.uniform(-2.5, 2.5);
                let direct = gmm.conditional_mean(x);
                // Integrate over a range that certainly carries all the
                // conditional mass, with forced subdivision so the adaptive
                // rule cannot step over a narrow peak.
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for c in &gmm.components {
                    let m = c.conditional_mean(x);
                    let sd = c.conditional_var().sqrt();
                    lo = lo.min(m - 40.0 * sd);
                    hi = hi.max(m + 40.0 * sd);
                }
                let f = |y: f64| y * gmm.conditional_density(x, y);
                let quad = adaptive_simpson_panels(&f, lo, hi, 16, 1e-10).unwrap();
                assert!(
                    (direct - quad).abs() < 1e-6,
                    "x={x}: direct {direct} vs quadrature {quad}"
                );
            }
        }
    }

    #[test]
    fn mirrored_mixture_averages_at_origin() {
        let a = GmmComponent {
            weight: 0.5,
            mean: [-1.0, 2.0],
            cov: [[1.0, 0.3], [0.3, 1.0]],
        };
        let b = GmmComponent {
            weight: 0.5,
            mean: [1.0, -4.0],
            cov: [[1.0, 0.3], [0.3, 1.0]],
        };
        let gmm = GmmParams {
            components: vec![a.clone(), b.clone()],
        };
        // Marginal densities at x = 0 are equal, so the conditional mean is
        // the average of the two component conditional means there.
        let expected = 0.5 * (a.conditional_mean(0.0) + b.conditional_mean(0.0));
        assert!((gmm.conditional_mean(0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn underflow_falls_back_to_nearest_component() {
        let gmm = GmmParams {
            components: vec![GmmComponent {
                weight: 1.0,
                mean: [0.0, 1.0],
                cov: [[0.01, 0.0], [0.0, 1.0]],
            }],
        };
        let (v, flagged) = gmm.conditional_mean_flagged(1e4);
        assert!(flagged);
        assert!(v.is_finite());
    }
}
