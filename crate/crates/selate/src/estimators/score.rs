//! Score matching on the observed outcome direction, with the optional
//! composite decomposition `psi = s_theta(x, y) + d/dy log beta(x, y, t)`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::estimators::mle::BetaModel;
use crate::estimators::GridSpec;
use crate::nnet::{Activation, Adam, Graph, Matrix, Mlp, NodeId, D_DY_STEP};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Weight of the `-log beta` selection-likelihood term.
    pub lambda1: f64,
    /// Weight of the `beta^2` regularizer.
    pub lambda2: f64,
    /// Hidden sizes of the per-arm score networks.
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Learning-rate halvings to attempt after a non-finite loss.
    pub max_retries: usize,
    /// Average network parameters over the last half of training. The split
    /// between the score networks and the selection network drifts along
    /// the optimization trajectory; tail averaging damps that drift.
    pub weight_averaging: bool,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            iterations: 800,
            learning_rate: 0.01,
            lambda1: 0.05,
            lambda2: 0.05,
            hidden: vec![64, 64],
            seed: 0,
            max_retries: 5,
            weight_averaging: true,
        }
    }
}

/// Running mean of network parameters (Polyak-style tail averaging).
struct ParamAverager {
    sums: Vec<Mlp>,
    count: f64,
}

impl ParamAverager {
    fn new(templates: &[&Mlp]) -> Self {
        let mut sums: Vec<Mlp> = templates.iter().map(|&n| n.clone()).collect();
        for net in &mut sums {
            net.weights.iter_mut().flatten().for_each(|w| *w = 0.0);
            net.biases.iter_mut().flatten().for_each(|b| *b = 0.0);
        }
        ParamAverager { sums, count: 0.0 }
    }

    fn accumulate(&mut self, nets: &[&Mlp]) {
        self.count += 1.0;
        for (sum, net) in self.sums.iter_mut().zip(nets) {
            for (s, w) in sum
                .weights
                .iter_mut()
                .flatten()
                .zip(net.weights.iter().flatten())
            {
                *s += w;
            }
            for (s, b) in sum
                .biases
                .iter_mut()
                .flatten()
                .zip(net.biases.iter().flatten())
            {
                *s += b;
            }
        }
    }

    fn apply(&self, nets: &mut [&mut Mlp]) {
        if self.count == 0.0 {
            return;
        }
        for (sum, net) in self.sums.iter().zip(nets.iter_mut()) {
            for (w, s) in net
                .weights
                .iter_mut()
                .flatten()
                .zip(sum.weights.iter().flatten())
            {
                *w = s / self.count;
            }
            for (b, s) in net
                .biases
                .iter_mut()
                .flatten()
                .zip(sum.biases.iter().flatten())
            {
                *b = s / self.count;
            }
        }
    }
}

/// Per-arm score networks over `(x, y)`, plus the shared selection network
/// when fitted with correction.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    pub arm_nets: [Mlp; 2],
    pub beta: Option<BetaModel>,
    pub grid: GridSpec,
    pub final_loss: f64,
}

struct ArmData {
    xy: Matrix,
    xyt: Matrix,
}

fn arm_data(observed_b: &Dataset, arm: u8) -> ArmData {
    let rows_xy: Vec<Vec<f64>> = observed_b
        .iter()
        .filter(|s| s.t == arm)
        .map(|s| vec![s.x, s.y])
        .collect();
    let rows_xyt: Vec<Vec<f64>> = observed_b
        .iter()
        .filter(|s| s.t == arm)
        .map(|s| vec![s.x, s.y, f64::from(s.t)])
        .collect();
    ArmData {
        xy: Matrix::from_rows(&rows_xy),
        xyt: Matrix::from_rows(&rows_xyt),
    }
}

/// Composite score of one arm at the given y-offset: the score network at
/// `(x, y+shift)` plus, with correction, the finite-difference derivative of
/// `log beta` at the shifted point.
fn psi(
    g: &mut Graph,
    arm_net: usize,
    beta_net: Option<usize>,
    data: &ArmData,
    shift: f64,
) -> NodeId {
    let xy = if shift == 0.0 {
        data.xy.clone()
    } else {
        data.xy.with_column_shifted(1, shift)
    };
    let s = g.net_forward_data(arm_net, &xy);
    match beta_net {
        None => s,
        Some(b) => {
            let xyt = if shift == 0.0 {
                data.xyt.clone()
            } else {
                data.xyt.with_column_shifted(1, shift)
            };
            let dlog = g.net_d_col(b, &xyt, 1, D_DY_STEP);
            g.add(s, dlog)
        }
    }
}

/// Build the full training loss; returns the loss node.
fn build_loss(
    g: &mut Graph,
    arms: &[ArmData; 2],
    beta_net: Option<usize>,
    all_xyt: &Matrix,
    cfg: &ScoreTrainConfig,
) -> NodeId {
    let n_total = (arms[0].xy.rows + arms[1].xy.rows) as f64;
    let h = D_DY_STEP;
    let mut total: Option<NodeId> = None;
    for (a, data) in arms.iter().enumerate() {
        if data.xy.rows == 0 {
            continue;
        }
        let psi_mid = psi(g, a, beta_net, data, 0.0);
        let psi_up = psi(g, a, beta_net, data, h);
        let psi_down = psi(g, a, beta_net, data, -h);
        let diff = g.sub(psi_up, psi_down);
        let dpsi_dy = g.scale(diff, 1.0 / (2.0 * h));
        let sq = g.square(psi_mid);
        let half_sq = g.scale(sq, 0.5);
        let per_unit = g.add(half_sq, dpsi_dy);
        let arm_sum = g.sum_all(per_unit);
        total = Some(match total {
            None => arm_sum,
            Some(t) => g.add(t, arm_sum),
        });
    }
    let mut loss = g.scale(total.expect("at least one arm has data"), 1.0 / n_total);

    if let Some(b) = beta_net {
        let raw = g.net_forward_data(b, all_xyt);
        let mean_raw = g.mean_all(raw);
        let neg_lik = g.scale(mean_raw, -cfg.lambda1);
        let two_raw = g.scale(raw, 2.0);
        let beta_sq = g.exp(two_raw);
        let mean_beta_sq = g.mean_all(beta_sq);
        let reg = g.scale(mean_beta_sq, cfg.lambda2);
        let with_lik = g.add(loss, neg_lik);
        loss = g.add(with_lik, reg);
    }
    loss
}

fn try_fit(
    observed_b: &Dataset,
    correction: bool,
    cfg: &ScoreTrainConfig,
    grid: &GridSpec,
    lr: f64,
) -> Result<Option<ScoreModel>> {
    let mut sizes = vec![2];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut net0 = Mlp::new(&sizes, Activation::Softplus, cfg.seed.wrapping_add(11));
    let mut net1 = Mlp::new(&sizes, Activation::Softplus, cfg.seed.wrapping_add(12));
    let mut beta = correction.then(|| BetaModel::new(cfg.seed.wrapping_add(13)));

    let arms = [arm_data(observed_b, 0), arm_data(observed_b, 1)];
    let all_rows: Vec<Vec<f64>> = observed_b
        .iter()
        .map(|s| vec![s.x, s.y, f64::from(s.t)])
        .collect();
    let all_xyt = Matrix::from_rows(&all_rows);

    let mut opts: Vec<Adam> = (0..3).map(|_| Adam::new(lr)).collect();
    let mut last_loss = f64::NAN;
    let mut averager: Option<ParamAverager> = None;
    for iter in 0..cfg.iterations {
        let (loss_value, grads) = {
            let nets: Vec<&Mlp> = match &beta {
                Some(b) => vec![&net0, &net1, &b.net],
                None => vec![&net0, &net1],
            };
            let mut g = Graph::new(&nets);
            let loss = build_loss(&mut g, &arms, beta.as_ref().map(|_| 2), &all_xyt, cfg);
            (g.scalar(loss), g.backward(loss))
        };
        if !loss_value.is_finite() {
            return Ok(None);
        }
        last_loss = loss_value;
        opts[0].step(&mut net0, &grads.nets[0]);
        opts[1].step(&mut net1, &grads.nets[1]);
        if let Some(b) = beta.as_mut() {
            opts[2].step(&mut b.net, &grads.nets[2]);
        }
        if cfg.weight_averaging && iter >= cfg.iterations / 2 {
            let nets: Vec<&Mlp> = match &beta {
                Some(b) => vec![&net0, &net1, &b.net],
                None => vec![&net0, &net1],
            };
            averager
                .get_or_insert_with(|| ParamAverager::new(&nets))
                .accumulate(&nets);
        }
    }
    if let Some(avg) = &averager {
        match beta.as_mut() {
            Some(b) => avg.apply(&mut [&mut net0, &mut net1, &mut b.net]),
            None => avg.apply(&mut [&mut net0, &mut net1]),
        }
    }
    Ok(Some(ScoreModel {
        arm_nets: [net0, net1],
        beta,
        grid: grid.clone(),
        final_loss: last_loss,
    }))
}

/// Fit per-arm score networks on region-B data by minimizing the Hyvarinen
/// objective of the composite observed score; a non-finite loss halves the
/// learning rate and retries, up to `max_retries` times.
pub fn fit_score_model(
    observed_b: &Dataset,
    correction: bool,
    cfg: &ScoreTrainConfig,
    grid: &GridSpec,
) -> Result<ScoreModel> {
    if observed_b.is_empty() {
        return Err(Error::Data("score matching needs a nonempty dataset".into()));
    }
    let mut lr = cfg.learning_rate;
    for _ in 0..=cfg.max_retries {
        match try_fit(observed_b, correction, cfg, grid, lr)? {
            Some(model) => return Ok(model),
            None => lr *= 0.5,
        }
    }
    Err(Error::Fit(format!(
        "score training stayed non-finite after {} learning-rate halvings",
        cfg.max_retries
    )))
}

/// Conditional mean by grid integration of the underlying score: cumulative
/// Riemann sum of the score gives the unnormalized log-density, a softmax
/// over the grid normalizes it.
///
/// The boolean flags unresolved boundary mass: when the edge density ratio
/// exceeds 1e-3 the grid is widened once, and the flag is set if the widened
/// grid still leaks.
pub fn score_conditional_mean(model: &ScoreModel, arm: u8, x: f64) -> Result<(f64, bool)> {
    let net = &model.arm_nets[arm as usize];
    let mut grid = model.grid.clone();
    for attempt in 0..2 {
        let (mean, leaky) = integrate_grid(net, x, &grid)?;
        if !leaky {
            return Ok((mean, false));
        }
        if attempt == 0 {
            let span = grid.y_max - grid.y_min;
            grid = GridSpec {
                y_min: grid.y_min - 0.5 * span,
                y_max: grid.y_max + 0.5 * span,
                points: grid.points,
            };
        } else {
            return Ok((mean, true));
        }
    }
    unreachable!()
}

fn integrate_grid(net: &Mlp, x: f64, grid: &GridSpec) -> Result<(f64, bool)> {
    let m = grid.points;
    if m < 4 || !(grid.y_min < grid.y_max) {
        return Err(Error::Config("invalid integration grid".into()));
    }
    let dy = (grid.y_max - grid.y_min) / (m - 1) as f64;
    let ys: Vec<f64> = (0..m).map(|j| grid.y_min + dy * j as f64).collect();
    let rows: Vec<Vec<f64>> = ys.iter().map(|&y| vec![x, y]).collect();
    let scores = net.forward_batch(&Matrix::from_rows(&rows))?;

    // log p~(y_j) = sum_{k<=j} s(x, y_k) dy, then softmax over the grid.
    let mut logp = Vec::with_capacity(m);
    let mut acc = 0.0;
    for j in 0..m {
        acc += scores.data[j] * dy;
        logp.push(acc);
    }
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp.iter().map(|lp| (lp - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mean = ys
        .iter()
        .zip(&weights)
        .map(|(y, w)| y * w / total)
        .sum::<f64>();

    let p_max = weights.iter().copied().fold(0.0f64, f64::max) / total;
    let p_edge = weights[0].max(weights[m - 1]) / total;
    Ok((mean, p_edge / p_max > 1e-3))
}
