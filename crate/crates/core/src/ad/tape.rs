//! Append-only reverse-mode tape over dense arrays.
//!
//! Nodes are recorded in topological order during the forward pass and visited
//! exactly once, in reverse, by [`Tape::backward`]. Every backward formula is
//! written in the scalar algebra `S`, so the same tape instantiated at
//! [`Dual`] scalars propagates forward-mode tangents through the reverse pass
//! and yields exact Hessian-vector products.

use super::array::{matmul_nn, matmul_nt, matmul_tn, Array};
use super::scalar::{logistic, Dual, Scalar};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// [n,m] plus a length-m row broadcast over rows.
    AddRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    Softplus(usize),
    Logistic(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    MaxConst(usize, f64),
    Sum(usize),
    /// Sum over axis 1: [n,m] -> [n].
    SumRows(usize),
    /// Mean over axis 0 in a canonical (sorted) summation order: [n,m] -> [m].
    MeanPool(usize),
    LogSumExp(usize),
    Reshape(usize),
    /// Flat slice (offset, len) of the parent's data.
    Slice(usize, usize, usize),
    /// Dot product with a constant weight vector -> scalar.
    DotConst(usize, Vec<f64>),
}

struct Node<S> {
    op: Op,
    value: Array<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array<S>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array<S>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_f64s(&mut self, shape: Vec<usize>, vals: &[f64]) -> Var {
        self.leaf(Array::from_f64s(shape, vals))
    }

    pub fn value(&self, v: Var) -> &Array<S> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Array::new(va.shape().to_vec(), data);
        self.push(Op::Add(a.0, b.0), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let out = Array::new(va.shape().to_vec(), data);
        self.push(Op::Sub(a.0, b.0), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Array::new(va.shape().to_vec(), data);
        self.push(Op::Mul(a.0, b.0), out)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        let (n, m) = (va.rows(), va.cols());
        assert_eq!(vr.len(), m, "add_row width mismatch");
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(va.data()[i * m + j] + vr.data()[j]);
            }
        }
        self.push(Op::AddRow(a.0, row.0), Array::new(vec![n, m], data))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.scale(c));
        self.push(Op::Scale(a.0, c), out)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|v| v + S::from_f64(c));
        self.push(Op::AddConst(a.0), out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_nn(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(Op::MatMul(a.0, b.0), out)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(super::scalar::softplus);
        self.push(Op::Softplus(a.0), out)
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(logistic);
        self.push(Op::Logistic(a.0), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.tanh());
        self.push(Op::Tanh(a.0), out)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.max_const(0.0));
        self.push(Op::Relu(a.0), out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.exp());
        self.push(Op::Exp(a.0), out)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.ln());
        self.push(Op::Ln(a.0), out)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.map(|v| v * v);
        self.push(Op::Square(a.0), out)
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|v| v.max_const(c));
        self.push(Op::MaxConst(a.0, c), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = S::ZERO;
        for &v in self.nodes[a.0].value.data() {
            acc = acc + v;
        }
        self.push(Op::Sum(a.0), Array::scalar(acc))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = S::ZERO;
            for j in 0..m {
                acc = acc + va.data()[i * m + j];
            }
            data.push(acc);
        }
        self.push(Op::SumRows(a.0), Array::new(vec![n], data))
    }

    /// Mean over the batch axis. Each column is summed in ascending primal
    /// order so that permuting the rows leaves the result bit-identical.
    pub fn mean_pool(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let (n, m) = (va.rows(), va.cols());
        assert!(n >= 1, "mean_pool over empty batch");
        let inv = 1.0 / n as f64;
        let mut data = Vec::with_capacity(m);
        let mut col: Vec<S> = Vec::with_capacity(n);
        for j in 0..m {
            col.clear();
            col.extend((0..n).map(|i| va.data()[i * m + j]));
            col.sort_by(|x, y| x.primal().total_cmp(&y.primal()));
            let mut acc = S::ZERO;
            for &v in &col {
                acc = acc + v;
            }
            data.push(acc.scale(inv));
        }
        self.push(Op::MeanPool(a.0), Array::new(vec![m], data))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        assert!(!va.is_empty(), "log_sum_exp over empty array");
        let m = va
            .data()
            .iter()
            .map(|v| v.primal())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut acc = S::ZERO;
        for &v in va.data() {
            acc = acc + (v - S::from_f64(m)).exp();
        }
        let out = acc.ln() + S::from_f64(m);
        self.push(Op::LogSumExp(a.0), Array::scalar(out))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.nodes[a.0].value.reshaped(shape);
        self.push(Op::Reshape(a.0), out)
    }

    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Var {
        let va = &self.nodes[a.0].value;
        assert!(offset + len <= va.len(), "slice out of bounds");
        let data = va.data()[offset..offset + len].to_vec();
        self.push(Op::Slice(a.0, offset, len), Array::new(vec![len], data))
    }

    pub fn dot_const(&mut self, a: Var, weights: &[f64]) -> Var {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.len(), weights.len(), "dot_const length mismatch");
        let mut acc = S::ZERO;
        for (&v, &w) in va.data().iter().zip(weights) {
            acc = acc + v.scale(w);
        }
        self.push(Op::DotConst(a.0, weights.to_vec()), Array::scalar(acc))
    }

    /// Reverse pass from a scalar root. Panics on a non-scalar root.
    pub fn backward(&self, root: Var) -> Gradients<S> {
        assert!(
            self.nodes[root.0].value.is_scalar(),
            "backward root must be scalar, got shape {:?}",
            self.nodes[root.0].value.shape()
        );
        self.backward_seeded(root, Array::scalar(S::ONE))
    }

    /// Reverse pass with an explicit adjoint seed on `root` (any shape).
    pub fn backward_seeded(&self, root: Var, seed: Array<S>) -> Gradients<S> {
        assert_eq!(self.nodes[root.0].value.shape(), seed.shape(), "seed shape mismatch");
        let mut adj: Vec<Option<Array<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(seed);
        for id in (0..self.nodes.len()).rev() {
            let Some(a) = adj[id].take() else { continue };
            self.accumulate(id, &a, &mut adj);
            adj[id] = Some(a);
        }
        Gradients { adj }
    }

    fn acc_into(&self, adj: &mut Vec<Option<Array<S>>>, id: usize, extra: Array<S>) {
        match &mut adj[id] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(extra.data()) {
                    *e = *e + *x;
                }
            }
            slot @ None => *slot = Some(extra),
        }
    }

    fn accumulate(&self, id: usize, adj_out: &Array<S>, adj: &mut Vec<Option<Array<S>>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_into(adj, *a, adj_out.clone());
                self.acc_into(adj, *b, adj_out.clone());
            }
            Op::Sub(a, b) => {
                self.acc_into(adj, *a, adj_out.clone());
                self.acc_into(adj, *b, adj_out.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let ga = Array::new(
                    va.shape().to_vec(),
                    adj_out.data().iter().zip(vb.data()).map(|(&g, &y)| g * y).collect(),
                );
                let gb = Array::new(
                    vb.shape().to_vec(),
                    adj_out.data().iter().zip(va.data()).map(|(&g, &x)| g * x).collect(),
                );
                self.acc_into(adj, *a, ga);
                self.acc_into(adj, *b, gb);
            }
            Op::AddRow(a, row) => {
                let (n, m) = {
                    let va = &self.nodes[*a].value;
                    (va.rows(), va.cols())
                };
                self.acc_into(adj, *a, adj_out.clone());
                let mut rg = vec![S::ZERO; m];
                for i in 0..n {
                    for j in 0..m {
                        rg[j] = rg[j] + adj_out.data()[i * m + j];
                    }
                }
                self.acc_into(adj, *row, Array::new(vec![m], rg));
            }
            Op::Scale(a, c) => {
                self.acc_into(adj, *a, adj_out.map(|v| v.scale(*c)));
            }
            Op::AddConst(a) => {
                self.acc_into(adj, *a, adj_out.clone());
            }
            Op::MatMul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                self.acc_into(adj, *a, matmul_nt(adj_out, vb));
                self.acc_into(adj, *b, matmul_tn(va, adj_out));
            }
            Op::Softplus(a) => {
                let va = &self.nodes[*a].value;
                let g = Array::new(
                    va.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &x)| g * logistic(x))
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Logistic(a) => {
                let out = &self.nodes[id].value;
                let g = Array::new(
                    out.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &s)| g * s * (S::ONE - s))
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Tanh(a) => {
                let out = &self.nodes[id].value;
                let g = Array::new(
                    out.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &t)| g * (S::ONE - t * t))
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Relu(a) => {
                let va = &self.nodes[*a].value;
                let g = Array::new(
                    va.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &x)| if x.primal() > 0.0 { g } else { S::ZERO })
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::MaxConst(a, c) => {
                let va = &self.nodes[*a].value;
                let g = Array::new(
                    va.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &x)| if x.primal() > *c { g } else { S::ZERO })
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Exp(a) => {
                let out = &self.nodes[id].value;
                let g = Array::new(
                    out.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &e)| g * e)
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Ln(a) => {
                let va = &self.nodes[*a].value;
                let g = Array::new(
                    va.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &x)| g * x.recip())
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Square(a) => {
                let va = &self.nodes[*a].value;
                let g = Array::new(
                    va.shape().to_vec(),
                    adj_out
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &x)| g * x.scale(2.0))
                        .collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Sum(a) => {
                let va = &self.nodes[*a].value;
                let g0 = adj_out.item();
                self.acc_into(adj, *a, Array::new(va.shape().to_vec(), vec![g0; va.len()]));
            }
            Op::SumRows(a) => {
                let va = &self.nodes[*a].value;
                let (n, m) = (va.rows(), va.cols());
                let mut g = Vec::with_capacity(n * m);
                for i in 0..n {
                    for _ in 0..m {
                        g.push(adj_out.data()[i]);
                    }
                }
                self.acc_into(adj, *a, Array::new(vec![n, m], g));
            }
            Op::MeanPool(a) => {
                let va = &self.nodes[*a].value;
                let (n, m) = (va.rows(), va.cols());
                let inv = 1.0 / n as f64;
                let mut g = Vec::with_capacity(n * m);
                for _ in 0..n {
                    for j in 0..m {
                        g.push(adj_out.data()[j].scale(inv));
                    }
                }
                self.acc_into(adj, *a, Array::new(vec![n, m], g));
            }
            Op::LogSumExp(a) => {
                let va = &self.nodes[*a].value;
                let out = self.nodes[id].value.item();
                let g0 = adj_out.item();
                let g = Array::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|&x| g0 * (x - out).exp()).collect(),
                );
                self.acc_into(adj, *a, g);
            }
            Op::Reshape(a) => {
                let va = &self.nodes[*a].value;
                self.acc_into(adj, *a, adj_out.reshaped(va.shape().to_vec()));
            }
            Op::Slice(a, offset, len) => {
                let va = &self.nodes[*a].value;
                let mut g = Array::zeros(va.shape().to_vec());
                g.data_mut()[*offset..*offset + *len].copy_from_slice(adj_out.data());
                self.acc_into(adj, *a, g);
            }
            Op::DotConst(a, w) => {
                let va = &self.nodes[*a].value;
                let g0 = adj_out.item();
                let g = Array::new(
                    va.shape().to_vec(),
                    w.iter().map(|&wi| g0.scale(wi)).collect(),
                );
                self.acc_into(adj, *a, g);
            }
        }
    }
}

/// Per-node adjoints produced by a backward pass.
pub struct Gradients<S> {
    adj: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Adjoint of `v`; `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Array<S>> {
        self.adj[v.0].as_ref()
    }

    /// Adjoint of `v` as primal f64s, zeros if unreached.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<f64> {
        match &self.adj[v.0] {
            Some(a) => a.primals(),
            None => vec![0.0; len],
        }
    }
}

/// Gradient of a scalar-valued tape function of one flat f64 leaf.
pub fn grad_scalar_fn(
    f: impl Fn(&mut Tape<f64>, Var) -> Var,
    at: &[f64],
) -> (f64, Vec<f64>) {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf_f64s(vec![at.len()], at);
    let root = f(&mut tape, x);
    let val = tape.value(root).item();
    let grads = tape.backward(root);
    (val, grads.wrt(x, at.len()))
}

/// Hessian-vector product (∇²f)·v via forward-over-reverse duals.
///
/// `f` must build a scalar root from the single leaf it is handed.
pub fn hvp(
    f: impl Fn(&mut Tape<Dual>, Var) -> Var,
    at: &[f64],
    v: &[f64],
) -> Vec<f64> {
    assert_eq!(at.len(), v.len(), "hvp tangent length mismatch");
    let mut tape = Tape::<Dual>::new();
    let data: Vec<Dual> = at.iter().zip(v).map(|(&a, &t)| Dual::new(a, t)).collect();
    let x = tape.leaf(Array::new(vec![at.len()], data));
    let root = f(&mut tape, x);
    let grads = tape.backward(root);
    match grads.get(x) {
        Some(g) => g.data().iter().map(|d| d.dv).collect(),
        None => vec![0.0; at.len()],
    }
}
