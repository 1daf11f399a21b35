//! Reverse-mode differentiation over an eagerly evaluated op tape.
//!
//! A [`Graph`] lives for one forward pass: nodes are appended in evaluation
//! order, so a single reverse sweep propagates gradients. Parameters are
//! pulled in by name from a [`ParamStore`] (one node per name, however often
//! it is reused) and their accumulated gradients flow back out through
//! [`Graph::apply_grads`].

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::softmax_rows;
use crate::numerics::{ParamStore, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone)]
enum Op {
    Constant,
    Param,
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    SoftmaxRows(NodeId),
    MaskedSoftmaxRow(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    MeanRows(NodeId),
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
}

struct Node {
    value: Tensor2,
    grad: Tensor2,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> NodeId {
        let grad = Tensor2::zeros(value.rows, value.cols);
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.shape(), (1, 1));
        self.nodes[id.0].value.data[0]
    }

    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor2::scalar(v))
    }

    /// Node backed by a named parameter; repeated calls share one node so
    /// gradient contributions from every use accumulate together.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store.get(name)?.clone();
        let id = self.push(value, Op::Param);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a 1xM row vector to every row of an NxM matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::shape(format!(
                "add_row: row shape {:?} does not match {n}x{m}",
                self.shape(row)
            )));
        }
        let mut value = self.nodes[a.0].value.clone();
        let r = &self.nodes[row.0].value;
        for i in 0..n {
            for j in 0..m {
                value.data[i * m + j] += r.data[j];
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let value = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let value = self.nodes[a.0].value.mul(&self.nodes[b.0].value);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a.0].value.scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(softplus_scalar);
        self.push(value, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(&self.nodes[a.0].value);
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Softmax over the available entries of a 1xM row; unavailable entries
    /// are exactly zero and receive no gradient.
    pub fn masked_softmax_row(&mut self, a: NodeId, available: &[bool]) -> Result<NodeId> {
        let (n, m) = self.shape(a);
        if n != 1 || available.len() != m {
            return Err(Error::shape(format!(
                "masked_softmax_row: input {n}x{m} with {} mask entries",
                available.len()
            )));
        }
        if !available.iter().any(|&v| v) {
            return Err(Error::numeric(
                "masked_softmax_row: no entries available".to_string(),
            ));
        }
        let x = &self.nodes[a.0].value;
        let max = x
            .data
            .iter()
            .zip(available)
            .filter(|(_, &av)| av)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut value = Tensor2::zeros(1, m);
        let mut sum = 0.0;
        for j in 0..m {
            if available[j] {
                let e = (x.data[j] - max).exp();
                value.data[j] = e;
                sum += e;
            }
        }
        for v in &mut value.data {
            *v /= sum;
        }
        Ok(self.push(value, Op::MaskedSoftmaxRow(a)))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let value = Tensor2::scalar(v.sum() / v.data.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor2::scalar(self.nodes[a.0].value.sum());
        self.push(value, Op::SumAll(a))
    }

    /// Column means: NxM input, 1xM output.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let (n, m) = v.shape();
        let mut value = Tensor2::zeros(1, m);
        for i in 0..n {
            for j in 0..m {
                value.data[j] += v.data[i * m + j];
            }
        }
        for d in &mut value.data {
            *d /= n as f64;
        }
        self.push(value, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, ma) = self.shape(a);
        let (nb, mb) = self.shape(b);
        if na != nb {
            return Err(Error::shape(format!(
                "concat_cols: row counts {na} and {nb} differ"
            )));
        }
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut value = Tensor2::zeros(na, ma + mb);
        for i in 0..na {
            value.data[i * (ma + mb)..i * (ma + mb) + ma].copy_from_slice(va.row_slice(i));
            value.data[i * (ma + mb) + ma..(i + 1) * (ma + mb)].copy_from_slice(vb.row_slice(i));
        }
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, ma) = self.shape(a);
        let (nb, mb) = self.shape(b);
        if ma != mb {
            return Err(Error::shape(format!(
                "concat_rows: column counts {ma} and {mb} differ"
            )));
        }
        let mut data = self.nodes[a.0].value.data.clone();
        data.extend_from_slice(&self.nodes[b.0].value.data);
        let value = Tensor2 {
            rows: na + nb,
            cols: ma,
            data,
        };
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    /// Arithmetic mean of same-shaped nodes.
    pub fn mean_of(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        let Some((&first, rest)) = ids.split_first() else {
            return Err(Error::shape("mean_of: empty node list".to_string()));
        };
        let mut acc = first;
        for &id in rest {
            acc = self.add(acc, id)?;
        }
        Ok(self.scale(acc, 1.0 / ids.len() as f64))
    }

    /// Inverted dropout: keeps entries with probability `1 - rate`, scaling
    /// survivors by `1/(1-rate)` so the expectation is unchanged.
    pub fn dropout(&mut self, a: NodeId, rate: f64, rng: &mut impl Rng) -> Result<NodeId> {
        if rate == 0.0 {
            return Ok(a);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0,1)")));
        }
        let (n, m) = self.shape(a);
        let keep = 1.0 / (1.0 - rate);
        let data = (0..n * m)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor2::from_vec(n, m, data)?);
        self.mul(a, mask)
    }

    fn add_grad(&mut self, id: NodeId, delta: &Tensor2) {
        self.nodes[id.0].grad.add_assign(delta);
    }

    /// Propagates d(loss)/d(node) to every node from a scalar loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(format!(
                "backward requires a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let loss_value = self.nodes[loss.0].value.data[0];
        if !loss_value.is_finite() {
            return Err(Error::numeric(format!("loss is non-finite: {loss_value}")));
        }
        for n in &mut self.nodes {
            n.grad.data.fill(0.0);
        }
        self.nodes[loss.0].grad.data[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = self.nodes[i].grad.clone();
            if g.data.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Constant | Op::Param => {}
                Op::Add(a, b) => {
                    self.add_grad(a, &g);
                    self.add_grad(b, &g);
                }
                Op::AddRow(a, row) => {
                    self.add_grad(a, &g);
                    let (n, m) = g.shape();
                    let mut sums = Tensor2::zeros(1, m);
                    for r in 0..n {
                        for c in 0..m {
                            sums.data[c] += g.data[r * m + c];
                        }
                    }
                    self.add_grad(row, &sums);
                }
                Op::Sub(a, b) => {
                    self.add_grad(a, &g);
                    let neg = g.scale(-1.0);
                    self.add_grad(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da = g.mul(&self.nodes[b.0].value);
                    let db = g.mul(&self.nodes[a.0].value);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Scale(a, c) => {
                    let da = g.scale(c);
                    self.add_grad(a, &da);
                }
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.nodes[b.0].value.transpose())?;
                    let db = self.nodes[a.0].value.transpose().matmul(&g)?;
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::Transpose(a) => {
                    let da = g.transpose();
                    self.add_grad(a, &da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = g.zip(y, |gv, yv| gv * (1.0 - yv * yv));
                    self.add_grad(a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let da = g.zip(y, |gv, yv| gv * yv * (1.0 - yv));
                    self.add_grad(a, &da);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = g.zip(x, |gv, xv| gv * sigmoid_scalar(xv));
                    self.add_grad(a, &da);
                }
                Op::SoftmaxRows(a) | Op::MaskedSoftmaxRow(a) => {
                    // dx_j = y_j * (g_j - sum_k g_k y_k) per row; holds for
                    // the masked case too since masked outputs are zero.
                    let y = self.nodes[i].value.clone();
                    let (n, m) = y.shape();
                    let mut da = Tensor2::zeros(n, m);
                    for r in 0..n {
                        let dot: f64 = (0..m)
                            .map(|c| g.data[r * m + c] * y.data[r * m + c])
                            .sum();
                        for c in 0..m {
                            da.data[r * m + c] = y.data[r * m + c] * (g.data[r * m + c] - dot);
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::MeanAll(a) => {
                    let (n, m) = self.shape(a);
                    let v = g.data[0] / (n * m) as f64;
                    let da = Tensor2 {
                        rows: n,
                        cols: m,
                        data: vec![v; n * m],
                    };
                    self.add_grad(a, &da);
                }
                Op::SumAll(a) => {
                    let (n, m) = self.shape(a);
                    let da = Tensor2 {
                        rows: n,
                        cols: m,
                        data: vec![g.data[0]; n * m],
                    };
                    self.add_grad(a, &da);
                }
                Op::MeanRows(a) => {
                    let (n, m) = self.shape(a);
                    let mut da = Tensor2::zeros(n, m);
                    for r in 0..n {
                        for c in 0..m {
                            da.data[r * m + c] = g.data[c] / n as f64;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::ConcatCols(a, b) => {
                    let (n, ma) = self.shape(a);
                    let (_, mb) = self.shape(b);
                    let mut da = Tensor2::zeros(n, ma);
                    let mut db = Tensor2::zeros(n, mb);
                    for r in 0..n {
                        let row = g.row_slice(r);
                        da.data[r * ma..(r + 1) * ma].copy_from_slice(&row[..ma]);
                        db.data[r * mb..(r + 1) * mb].copy_from_slice(&row[ma..]);
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::ConcatRows(a, b) => {
                    let (na, m) = self.shape(a);
                    let (nb, _) = self.shape(b);
                    let da = Tensor2 {
                        rows: na,
                        cols: m,
                        data: g.data[..na * m].to_vec(),
                    };
                    let db = Tensor2 {
                        rows: nb,
                        cols: m,
                        data: g.data[na * m..].to_vec(),
                    };
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
            }
        }

        for (name, id) in &self.params {
            if !self.nodes[id.0].grad.is_finite() {
                return Err(Error::numeric(format!("non-finite gradient for parameter {name}")));
            }
        }
        Ok(())
    }

    /// Gradients of the most recent [`Graph::backward`] per parameter name.
    pub fn grads(&self) -> BTreeMap<String, Tensor2> {
        self.params
            .iter()
            .map(|(name, id)| (name.clone(), self.nodes[id.0].grad.clone()))
            .collect()
    }

    /// Adds this graph's parameter gradients into the store's slots.
    pub fn apply_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.params {
            store.accumulate_grad(name, &self.nodes[id.0].grad)?;
        }
        Ok(())
    }
}
