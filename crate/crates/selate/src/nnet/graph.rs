//! Define-by-run tape over batched matrices.
//!
//! Values are computed eagerly as the graph is built; `backward` replays the
//! tape in reverse and accumulates exact parameter gradients for every
//! network registered with the graph.

use super::matrix::Matrix;
use super::{Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear { net: usize, layer: usize, input: usize },
    Act { act: Activation, input: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulConst { input: usize, konst: Matrix },
    Scale { input: usize, c: f64 },
    AddScalar { input: usize, c: f64 },
    Square(usize),
    Ln(usize),
    Exp(usize),
    RowSum(usize),
    Reshape { input: usize },
    SumAll(usize),
    MeanAll(usize),
}

struct Node {
    op: Op,
    value: Matrix,
    /// False when no network parameter feeds this node; backward skips the
    /// whole subtree (notably gradients into raw data inputs).
    needs_grad: bool,
}

/// Per-network gradients, shaped like the network's weights and biases.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.w {
            out.extend_from_slice(w);
        }
        for b in &self.b {
            out.extend_from_slice(b);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub nets: Vec<NetGrads>,
}

pub struct Graph<'a> {
    nets: Vec<&'a Mlp>,
    nodes: Vec<Node>,
}

impl<'a> Graph<'a> {
    pub fn new(nets: &[&'a Mlp]) -> Self {
        Graph {
            nets: nets.to_vec(),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Linear { .. } => true,
            Op::Act { input, .. }
            | Op::MulConst { input, .. }
            | Op::Scale { input, .. }
            | Op::AddScalar { input, .. }
            | Op::Square(input)
            | Op::Ln(input)
            | Op::Exp(input)
            | Op::RowSum(input)
            | Op::Reshape { input }
            | Op::SumAll(input)
            | Op::MeanAll(input) => self.nodes[*input].needs_grad,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!((v.rows, v.cols), (1, 1), "node is not a scalar");
        v.data[0]
    }

    pub fn input(&mut self, data: Matrix) -> NodeId {
        self.push(Op::Input, data)
    }

    /// Full forward pass of network `net` starting from `input`.
    pub fn net_forward(&mut self, net: usize, input: NodeId) -> NodeId {
        let mlp = self.nets[net];
        assert_eq!(
            self.value(input).cols,
            mlp.input_dim(),
            "input width does not match network input size"
        );
        let mut cur = input;
        for l in 0..mlp.n_layers() {
            if l > 0 {
                cur = self.activation(mlp.activation, cur);
            }
            let value = self.nets[net].apply_layer(l, self.value(cur));
            cur = self.push(
                Op::Linear {
                    net,
                    layer: l,
                    input: cur.0,
                },
                value,
            );
        }
        cur
    }

    /// Forward pass on raw data.
    pub fn net_forward_data(&mut self, net: usize, data: &Matrix) -> NodeId {
        let input = self.input(data.clone());
        self.net_forward(net, input)
    }

    /// Differentiable central difference of network `net` in data column
    /// `col`: `(f(.. col+h ..) - f(.. col-h ..)) / (2h)`. A composition of
    /// two forward passes, so parameter gradients flow through it.
    pub fn net_d_col(&mut self, net: usize, data: &Matrix, col: usize, h: f64) -> NodeId {
        let plus = self.net_forward_data(net, &data.with_column_shifted(col, h));
        let minus = self.net_forward_data(net, &data.with_column_shifted(col, -h));
        let diff = self.sub(plus, minus);
        self.scale(diff, 1.0 / (2.0 * h))
    }

    pub fn activation(&mut self, act: Activation, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| act.apply(v));
        self.push(
            Op::Act {
                act,
                input: input.0,
            },
            value,
        )
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "shape mismatch");
        let data = va
            .data
            .iter()
            .zip(&vb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows, va.cols, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.binary(a, b, |x, y| x + y);
        self.push(Op::Add(a.0, b.0), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.binary(a, b, |x, y| x - y);
        self.push(Op::Sub(a.0, b.0), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.binary(a, b, |x, y| x * y);
        self.push(Op::Mul(a.0, b.0), value)
    }

    /// Elementwise multiplication by a constant matrix (no gradient into the
    /// constant).
    pub fn mul_const(&mut self, input: NodeId, konst: Matrix) -> NodeId {
        let v = self.value(input);
        assert_eq!((v.rows, v.cols), (konst.rows, konst.cols), "shape mismatch");
        let data = v.data.iter().zip(&konst.data).map(|(&x, &k)| x * k).collect();
        let value = Matrix::from_vec(v.rows, v.cols, data);
        self.push(
            Op::MulConst {
                input: input.0,
                konst,
            },
            value,
        )
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> NodeId {
        let value = self.value(input).map(|v| c * v);
        self.push(Op::Scale { input: input.0, c }, value)
    }

    pub fn add_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        let value = self.value(input).map(|v| v + c);
        self.push(Op::AddScalar { input: input.0, c }, value)
    }

    pub fn square(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v * v);
        self.push(Op::Square(input.0), value)
    }

    pub fn ln(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(f64::ln);
        self.push(Op::Ln(input.0), value)
    }

    pub fn exp(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(f64::exp);
        self.push(Op::Exp(input.0), value)
    }

    /// Row sums: `(n, m) -> (n, 1)`.
    pub fn row_sum(&mut self, input: NodeId) -> NodeId {
        let v = self.value(input);
        let data = (0..v.rows).map(|i| v.row(i).iter().sum()).collect();
        let value = Matrix::from_vec(v.rows, 1, data);
        self.push(Op::RowSum(input.0), value)
    }

    /// Reinterpret an `(n, m)` node as `(rows, cols)` with the same data.
    pub fn reshape(&mut self, input: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = self.value(input);
        assert_eq!(v.rows * v.cols, rows * cols, "reshape size mismatch");
        let value = Matrix::from_vec(rows, cols, v.data.clone());
        self.push(Op::Reshape { input: input.0 }, value)
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let v: f64 = self.value(input).data.iter().sum();
        self.push(Op::SumAll(input.0), Matrix::from_vec(1, 1, vec![v]))
    }

    pub fn mean_all(&mut self, input: NodeId) -> NodeId {
        let m = self.value(input);
        let v: f64 = m.data.iter().sum::<f64>() / (m.rows * m.cols) as f64;
        self.push(Op::MeanAll(input.0), Matrix::from_vec(1, 1, vec![v]))
    }

    /// Binary cross-entropy with logits: `mean(softplus(z) - t * z)`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Matrix) -> NodeId {
        let sp = self.activation(Activation::Softplus, logits);
        let tz = self.mul_const(logits, targets.clone());
        let per_unit = self.sub(sp, tz);
        self.mean_all(per_unit)
    }

    /// Reverse pass from a scalar loss node. Returns gradients for every
    /// registered network.
    pub fn backward(&mut self, loss: NodeId) -> Gradients {
        {
            let v = self.value(loss);
            assert_eq!((v.rows, v.cols), (1, 1), "loss must be scalar");
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if n.needs_grad || i == loss.0 {
                    Matrix::zeros(n.value.rows, n.value.cols)
                } else {
                    Matrix::zeros(0, 0)
                }
            })
            .collect();
        grads[loss.0].data[0] = 1.0;

        let mut net_grads: Vec<NetGrads> = self.nets.iter().map(|n| n.zero_grads()).collect();

        for idx in (0..self.nodes.len()).rev() {
            if !(self.nodes[idx].needs_grad || idx == loss.0)
                || grads[idx].data.iter().all(|&g| g == 0.0)
            {
                continue;
            }
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Linear { net, layer, input } => {
                    let mlp = self.nets[*net];
                    let fan_in = mlp.layer_sizes[*layer];
                    let fan_out = mlp.layer_sizes[*layer + 1];
                    let x = &self.nodes[*input].value;
                    let input_needs_grad = self.nodes[*input].needs_grad;
                    let w = &mlp.weights[*layer];
                    let ng = &mut net_grads[*net];
                    let gw = &mut ng.w[*layer];
                    let gb = &mut ng.b[*layer];
                    let gx = &mut grads[*input];
                    for i in 0..x.rows {
                        let xi = x.row(i);
                        let gi = g.row(i);
                        for j in 0..fan_out {
                            let gij = gi[j];
                            if gij == 0.0 {
                                continue;
                            }
                            gb[j] += gij;
                            let gwj = &mut gw[j * fan_in..(j + 1) * fan_in];
                            for k in 0..fan_in {
                                gwj[k] += gij * xi[k];
                            }
                        }
                        if input_needs_grad {
                            let gxi = gx.row_mut(i);
                            for j in 0..fan_out {
                                let gij = gi[j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let wj = &w[j * fan_in..(j + 1) * fan_in];
                                for k in 0..fan_in {
                                    gxi[k] += gij * wj[k];
                                }
                            }
                        }
                    }
                }
                Op::Act { act, input } => {
                    if self.nodes[*input].needs_grad {
                        let out = &self.nodes[idx].value;
                        let gx = &mut grads[*input];
                        for (k, (&gv, &ov)) in g.data.iter().zip(&out.data).enumerate() {
                            gx.data[k] += gv * act.derivative_from_output(ov);
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        for k in 0..g.data.len() {
                            grads[a].data[k] += g.data[k];
                        }
                    }
                    if self.nodes[b].needs_grad {
                        for k in 0..g.data.len() {
                            grads[b].data[k] += g.data[k];
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        for k in 0..g.data.len() {
                            grads[a].data[k] += g.data[k];
                        }
                    }
                    if self.nodes[b].needs_grad {
                        for k in 0..g.data.len() {
                            grads[b].data[k] -= g.data[k];
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let vb = self.nodes[b].value.data.clone();
                        for k in 0..g.data.len() {
                            grads[a].data[k] += g.data[k] * vb[k];
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let va = self.nodes[a].value.data.clone();
                        for k in 0..g.data.len() {
                            grads[b].data[k] += g.data[k] * va[k];
                        }
                    }
                }
                Op::MulConst { input, konst } => {
                    if self.nodes[*input].needs_grad {
                        let kd = konst.data.clone();
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k] * kd[k];
                        }
                    }
                }
                Op::Scale { input, c } => {
                    if self.nodes[*input].needs_grad {
                        let c = *c;
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k] * c;
                        }
                    }
                }
                Op::AddScalar { input, .. } => {
                    if self.nodes[*input].needs_grad {
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k];
                        }
                    }
                }
                Op::Square(input) => {
                    if self.nodes[*input].needs_grad {
                        let x = self.nodes[*input].value.data.clone();
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += 2.0 * x[k] * g.data[k];
                        }
                    }
                }
                Op::Ln(input) => {
                    if self.nodes[*input].needs_grad {
                        let x = self.nodes[*input].value.data.clone();
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k] / x[k];
                        }
                    }
                }
                Op::Exp(input) => {
                    if self.nodes[*input].needs_grad {
                        let out = self.nodes[idx].value.data.clone();
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k] * out[k];
                        }
                    }
                }
                Op::RowSum(input) => {
                    if self.nodes[*input].needs_grad {
                        let gx = &mut grads[*input];
                        let cols = gx.cols;
                        for i in 0..gx.rows {
                            let gi = g.data[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = gx.row_mut(i);
                            for k in 0..cols {
                                row[k] += gi;
                            }
                        }
                    }
                }
                Op::Reshape { input } => {
                    if self.nodes[*input].needs_grad {
                        let gx = &mut grads[*input];
                        for k in 0..g.data.len() {
                            gx.data[k] += g.data[k];
                        }
                    }
                }
                Op::SumAll(input) => {
                    if self.nodes[*input].needs_grad {
                        let gv = g.data[0];
                        let gx = &mut grads[*input];
                        for v in gx.data.iter_mut() {
                            *v += gv;
                        }
                    }
                }
                Op::MeanAll(input) => {
                    if self.nodes[*input].needs_grad {
                        let n = self.nodes[*input].value.data.len();
                        let gx = &mut grads[*input];
                        let gv = g.data[0] / n as f64;
                        for v in gx.data.iter_mut() {
                            *v += gv;
                        }
                    }
                }
            }
        }

        Gradients { nets: net_grads }
    }
}
