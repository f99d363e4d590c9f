//! Polynomial-basis outcome regression.

use crate::numeric::least_squares;
use crate::{Error, Result};

/// Ordinary least squares of `y` on the basis `[1, x, .., x^degree]`.
pub fn polynomial_fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    let p = degree + 1;
    let mut distinct = xs.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < p {
        return Err(Error::Fit(format!(
            "polynomial fit of degree {degree} needs at least {p} distinct x values, got {}",
            distinct.len()
        )));
    }
    let mut design = Vec::with_capacity(xs.len() * p);
    for &x in xs {
        let mut pow = 1.0;
        for _ in 0..p {
            design.push(pow);
            pow *= x;
        }
    }
    least_squares(&design, xs.len(), p, ys)
}

/// Evaluate fitted coefficients at `x`.
pub fn polynomial_mu(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{mean_function, OutcomeSpec};

    #[test]
    fn recovers_generating_polynomial() {
        let spec = OutcomeSpec::default();
        let xs: Vec<f64> = (0..50).map(|i| -3.0 + 6.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| mean_function(&spec, 0, x).unwrap()).collect();
        let coeffs = polynomial_fit(&xs, &ys, 3).unwrap();
        let expected = [1.0, 0.5, 0.0, -0.2];
        for (c, e) in coeffs.iter().zip(expected.iter()) {
            assert!((c - e).abs() < 1e-8, "{coeffs:?}");
        }
    }

    #[test]
    fn constant_outcome() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys = vec![4.2; 10];
        let coeffs = polynomial_fit(&xs, &ys, 3).unwrap();
        assert!((coeffs[0] - 4.2).abs() < 1e-9);
        for c in &coeffs[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn underdetermined_errors() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0, 2.0];
        assert!(polynomial_fit(&xs, &ys, 3).is_err());
    }
}
