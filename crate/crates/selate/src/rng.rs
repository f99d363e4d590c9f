//! Seeded, splittable random number streams.
//!
//! Every stochastic mechanism in the benchmark (covariate draws, treatment
//! assignment, noise, selection) owns its own stream, so changing one
//! mechanism never shifts the draws of another. Streams are backed by
//! ChaCha8, which exposes independent substreams for a fixed seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for the per-mechanism substreams used by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Covariate,
    Treatment,
    Noise,
    Selection,
    Init,
    Oracle,
    Shuffle,
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::Covariate => 1,
            StreamId::Treatment => 2,
            StreamId::Noise => 3,
            StreamId::Selection => 4,
            StreamId::Init => 5,
            StreamId::Oracle => 6,
            StreamId::Shuffle => 7,
        }
    }
}

/// A deterministic random stream: identical seed (and substream) yields a
/// bit-identical draw sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        RngStream {
            seed,
            stream,
            counter: 0,
            inner,
        }
    }

    /// Independent substream for one mechanism, derived from the same seed.
    pub fn substream(&self, id: StreamId) -> RngStream {
        Self::with_stream(self.seed, id.index())
    }

    /// Numbered substream (fold splits, per-net initializers).
    pub fn numbered_substream(&self, n: u64) -> RngStream {
        Self::with_stream(self.seed, 100 + n)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws taken from this stream so far.
    pub fn draws(&self) -> u64 {
        self.counter
    }

    /// Uniform draw on `[0, 1)`.
    pub fn unit_uniform(&mut self) -> f64 {
        self.counter += 1;
        self.inner.random::<f64>()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_uniform()
    }

    /// Standard normal via Box-Muller on two uniform draws.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.unit_uniform().max(f64::MIN_POSITIVE);
        let u2 = self.unit_uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Zero-mean Laplace with scale `b`, by inverse CDF.
    pub fn laplace(&mut self, b: f64) -> f64 {
        let u = self.unit_uniform() - 0.5;
        -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
    }

    /// Pareto (type I, shape `alpha`, scale `x_m`) by inverse CDF, shifted to
    /// zero mean. Requires `alpha > 1` so the mean exists.
    pub fn pareto_centered(&mut self, alpha: f64, x_m: f64) -> f64 {
        let u = self.unit_uniform();
        let raw = x_m / (1.0 - u).max(f64::MIN_POSITIVE).powf(1.0 / alpha);
        raw - alpha * x_m / (alpha - 1.0)
    }

    /// Log-normal `exp(sigma * Z)` shifted to zero mean `exp(sigma^2 / 2)`.
    pub fn log_normal_centered(&mut self, sigma: f64) -> f64 {
        (sigma * self.standard_normal()).exp() - (0.5 * sigma * sigma).exp()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_uniform() < p
    }

    /// Fisher-Yates shuffle of `0..n`, used for fold assignment.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.uniform(0.0, (i + 1) as f64)) as usize;
            idx.swap(i, j.min(i));
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.unit_uniform().to_bits(), b.unit_uniform().to_bits());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(8);
        assert_ne!(a.unit_uniform(), b.unit_uniform());
    }

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = RngStream::new(3);
        for _ in 0..1000 {
            assert!(!rng.bernoulli(0.0));
        }
    }

    #[test]
    fn substreams_are_independent_of_sibling_consumption() {
        let root = RngStream::new(42);
        let mut noise_a = root.substream(StreamId::Noise);
        // Consuming the treatment stream must not shift the noise stream.
        let mut treat = root.substream(StreamId::Treatment);
        for _ in 0..57 {
            treat.unit_uniform();
        }
        let mut noise_b = root.substream(StreamId::Noise);
        for _ in 0..20 {
            assert_eq!(noise_a.unit_uniform(), noise_b.unit_uniform());
        }
    }

    #[test]
    fn uniform_moments() {
        let mut rng = RngStream::new(11);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = rng.uniform(-3.0, 3.0);
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 3.0).abs() < 0.02 * 3.0, "var {var}");
    }

    #[test]
    fn centered_noise_has_zero_mean() {
        let n = 1_000_000;
        let mut rng = RngStream::new(5);
        let mut pareto = 0.0;
        let mut lognorm = 0.0;
        let mut laplace = 0.0;
        for _ in 0..n {
            pareto += rng.pareto_centered(3.0, 0.5);
            lognorm += rng.log_normal_centered(0.5);
            laplace += rng.laplace(0.5);
        }
        assert!((pareto / n as f64).abs() < 0.02);
        assert!((lognorm / n as f64).abs() < 0.02);
        assert!((laplace / n as f64).abs() < 0.02);
    }

    #[test]
    fn draw_counter_tracks_calls() {
        let mut rng = RngStream::new(1);
        rng.unit_uniform();
        rng.standard_normal(); // two uniforms
        assert_eq!(rng.draws(), 3);
    }
}
