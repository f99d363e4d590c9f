//! Small numeric utilities shared across modules: adaptive quadrature and a
//! dense least-squares solver.

use crate::{Error, Result};

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric("quadrature bounds must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut depth_exceeded = false;
    let value = simpson_rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol,
        50,
        &mut depth_exceeded,
    );
    if depth_exceeded {
        return Err(Error::Numeric(format!(
            "quadrature failed to converge on [{a}, {b}] at tol {tol}"
        )));
    }
    Ok(value)
}

/// Adaptive Simpson with forced pre-subdivision into `panels` equal panels,
/// for integrands whose mass is concentrated in a narrow region.
pub fn adaptive_simpson_panels(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    tol: f64,
) -> Result<f64> {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == panels { b } else { lo + width };
        total += adaptive_simpson(f, lo, hi, tol / panels as f64)?;
    }
    Ok(total)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    depth_exceeded: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || !delta.is_finite() {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *depth_exceeded = true;
        return left + right;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, depth_exceeded)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, depth_exceeded)
}

/// Least squares `argmin ||X b - y||` by Householder QR with a rank check.
///
/// `x` is row-major, `n` rows by `p` columns. Errors when the design is
/// rank-deficient (|R_jj| below `1e-10 * max |R|`).
pub fn least_squares(x: &[f64], n: usize, p: usize, y: &[f64]) -> Result<Vec<f64>> {
    if n < p {
        return Err(Error::Numeric(format!(
            "least squares needs at least {p} rows, got {n}"
        )));
    }
    assert_eq!(x.len(), n * p);
    assert_eq!(y.len(), n);
    let mut a = x.to_vec();
    let mut rhs = y.to_vec();

    // Householder transforms applied in place; R accumulates in the upper
    // triangle and Q^T y in rhs.
    for j in 0..p {
        let mut norm = 0.0f64;
        for i in j..n {
            norm += a[i * p + j] * a[i * p + j];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[j * p + j] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n - j];
        v[0] = a[j * p + j] - alpha;
        for i in (j + 1)..n {
            v[i - j] = a[i * p + j];
        }
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in j..p {
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * a[i * p + col];
            }
            let c = 2.0 * dot / vnorm2;
            for i in j..n {
                a[i * p + col] -= c * v[i - j];
            }
        }
        let mut dot = 0.0;
        for i in j..n {
            dot += v[i - j] * rhs[i];
        }
        let c = 2.0 * dot / vnorm2;
        for i in j..n {
            rhs[i] -= c * v[i - j];
        }
    }

    let max_diag = (0..p).map(|j| a[j * p + j].abs()).fold(0.0f64, f64::max);
    if max_diag == 0.0 {
        return Err(Error::Numeric("rank-deficient design matrix".into()));
    }
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        let d = a[j * p + j];
        if d.abs() < 1e-10 * max_diag {
            return Err(Error::Numeric("rank-deficient design matrix".into()));
        }
        let mut s = rhs[j];
        for k in (j + 1)..p {
            s -= a[j * p + k] * beta[k];
        }
        beta[j] = s / d;
    }
    Ok(beta)
}

/// Mean and sample standard deviation (n - 1 denominator; 0 when n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_exact() {
        let f = |x: f64| 3.0 * x * x;
        let v = adaptive_simpson(&f, 0.0, 2.0, 1e-10).unwrap();
        assert!((v - 8.0).abs() < 1e-9);
    }

    #[test]
    fn simpson_gaussian_mass() {
        let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = adaptive_simpson(&f, -8.0, 8.0, 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn least_squares_recovers_cubic() {
        let coeffs = [1.0, 0.5, 0.0, -0.2];
        let xs: Vec<f64> = (0..40).map(|i| -3.0 + 6.0 * i as f64 / 39.0).collect();
        let mut design = Vec::new();
        let mut y = Vec::new();
        for &x in &xs {
            design.extend_from_slice(&[1.0, x, x * x, x * x * x]);
            y.push(coeffs[0] + coeffs[1] * x + coeffs[3] * x * x * x);
        }
        let beta = least_squares(&design, xs.len(), 4, &y).unwrap();
        for (b, c) in beta.iter().zip(coeffs.iter()) {
            assert!((b - c).abs() < 1e-10);
        }
    }

    #[test]
    fn least_squares_rank_deficient() {
        // Two identical columns.
        let design = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        assert!(least_squares(&design, 4, 2, &y).is_err());
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std(&[1.0, -1.0]);
        assert_eq!(m, 0.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        let (_, s1) = mean_std(&[5.0]);
        assert_eq!(s1, 0.0);
    }
}
