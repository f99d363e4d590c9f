//! Scratch probe for the composite-score decomposition (deleted before release).

use selate::datagen::{generate_population, PopulationConfig};
use selate::estimators::{fit_score_model, score_conditional_mean, GridSpec, ScoreTrainConfig};
use selate::propensity::{fit_propensity, overlap_filter, TrainConfig};
use selate::rng::{RngStream, StreamId};
use selate::selection::{apply_selection, SelectionSpec};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(800);
    let cfg = PopulationConfig { seed, ..PopulationConfig::default() };
    let pop = generate_population(&cfg).unwrap();
    let mut rng = RngStream::new(seed).substream(StreamId::Selection);
    let (obs, rep) = apply_selection(&pop, &SelectionSpec::default(), &mut rng).unwrap();
    eprintln!("kept {} of {}", rep.kept, rep.total);
    let tcfg = TrainConfig { iterations: 300, ..TrainConfig::logistic_fallback() };
    let prop = fit_propensity(&obs, 5, &tcfg).unwrap();
    let regions = overlap_filter(&obs, &prop, 0.05).unwrap();
    let obs_b = obs.subset(&regions.b_indices);
    eprintln!("region B: {} units", obs_b.len());

    let score_cfg = ScoreTrainConfig { iterations: iters, seed, ..ScoreTrainConfig::default() };
    let grid = GridSpec::default();

    let plain = fit_score_model(&obs_b, false, &score_cfg, &grid).unwrap();
    let corrected = fit_score_model(&obs_b, true, &score_cfg, &grid).unwrap();

    // Implied conditional means per arm at a few x.
    println!("x | mu0_true mu1_true | sm_mu0 sm_mu1 | smb_mu0 smb_mu1");
    for &x in &[-1.5, -0.5, 0.0, 0.5, 1.5] {
        let mu0 = 1.0 + 0.5 * x - 0.2 * x * x * x;
        let mu1 = 3.0 - 0.5 * x + 0.3 * x * x * x;
        let (p0, _) = score_conditional_mean(&plain, 0, x).unwrap();
        let (p1, _) = score_conditional_mean(&plain, 1, x).unwrap();
        let (c0, _) = score_conditional_mean(&corrected, 0, x).unwrap();
        let (c1, _) = score_conditional_mean(&corrected, 1, x).unwrap();
        println!("{x:5.1} | {mu0:7.3} {mu1:7.3} | {p0:7.3} {p1:7.3} | {c0:7.3} {c1:7.3}");
    }

    // Learned log-beta slope in y at x = 0 vs the true selection logit slope.
    let beta = corrected.beta.as_ref().unwrap();
    println!("\ny | dlogbeta/dy (t=0) | true dlog sigma = 3(1 - sigmoid(3(y-1.5)))");
    for k in 0..9 {
        let y = -1.0 + 0.75 * k as f64;
        let d = {
            let h = 1e-3;
            (beta.raw(0.0, y + h, 0) - beta.raw(0.0, y - h, 0)) / (2.0 * h)
        };
        let s = 1.0 / (1.0 + (-3.0f64 * (y - 1.5)).exp());
        println!("{y:5.2} | {d:8.4} | {:8.4}", 3.0 * (1.0 - s));
    }

    // Weights' x-tilt: mean 1/beta by x bin.
    println!("\nx-bin | mean weight 1/beta");
    let mut bins = vec![(0.0f64, 0usize); 6];
    for s in obs_b.iter() {
        let b = (((s.x + 3.0) / 6.0 * 6.0) as usize).min(5);
        let (w, _) = beta.weight(s.x, s.y, s.t);
        bins[b].0 += w;
        bins[b].1 += 1;
    }
    for (i, (sum, n)) in bins.iter().enumerate() {
        if *n > 0 {
            println!("[{:.1},{:.1}) | {:.3}", -3.0 + i as f64, -2.0 + i as f64, sum / *n as f64);
        }
    }
}
