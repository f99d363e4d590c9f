//! Adaptive-moment gradient optimizer with standard defaults.

use super::graph::NetGrads;
use super::Mlp;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of `net` from `grads`. Moment buffers are allocated on the
    /// first call and must be reused with the same network shape.
    pub fn step(&mut self, net: &mut Mlp, grads: &NetGrads) {
        let flat_grads = grads.flatten();
        if self.m.is_empty() {
            self.m = vec![0.0; flat_grads.len()];
            self.v = vec![0.0; flat_grads.len()];
        }
        assert_eq!(self.m.len(), flat_grads.len(), "optimizer/network mismatch");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);

        let mut k = 0;
        let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / b1t;
            let vhat = *v / b2t;
            *param -= self.lr * mhat / (vhat.sqrt() + self.eps);
        };
        for l in 0..net.weights.len() {
            for w in net.weights[l].iter_mut() {
                update(w, flat_grads[k], &mut self.m[k], &mut self.v[k]);
                k += 1;
            }
        }
        for l in 0..net.biases.len() {
            for b in net.biases[l].iter_mut() {
                update(b, flat_grads[k], &mut self.m[k], &mut self.v[k]);
                k += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Activation, Graph, Matrix};

    #[test]
    fn zero_learning_rate_leaves_weights_bit_identical() {
        let mut net = Mlp::new(&[2, 4, 1], Activation::Softplus, 12);
        let before = net.clone();
        let data = Matrix::from_rows(&[vec![0.3, -0.4], vec![1.0, 2.0]]);
        let mut g = Graph::new(&[&net]);
        let out = g.net_forward_data(0, &data);
        let sq = g.square(out);
        let loss = g.mean_all(sq);
        let grads = g.backward(loss);
        drop(g);
        let mut opt = Adam::new(0.0);
        opt.step(&mut net, &grads.nets[0]);
        for (a, b) in net.weights.iter().flatten().zip(before.weights.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (w - 3)^2 expressed through a 1x1 linear net on input 1.
        let mut net = Mlp::new(&[1, 1], Activation::Relu, 4);
        net.weights[0][0] = 0.0;
        net.biases[0][0] = 0.0;
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let data = Matrix::from_vec(1, 1, vec![1.0]);
            let mut g = Graph::new(&[&net]);
            let out = g.net_forward_data(0, &data);
            let shifted = g.add_scalar(out, -3.0);
            let sq = g.square(shifted);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss);
            drop(g);
            opt.step(&mut net, &grads.nets[0]);
        }
        let w = net.weights[0][0] + net.biases[0][0];
        assert!((w - 3.0).abs() < 1e-3, "w {w}");
    }
}
