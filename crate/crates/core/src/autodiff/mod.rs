//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation is evaluated eagerly when recorded and appended to the
//! tape, so creation order is a topological order. `Tape::backward` walks the
//! nodes in exact reverse creation order and accumulates adjoints by summation.

mod tensor;

use std::fmt;
use std::str::FromStr;

pub use tensor::Tensor;
pub(crate) use tensor::gemm;

use crate::error::{Error, Result};

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul,
    Add,
    /// Elementwise product of equally shaped operands.
    Mul,
    /// `[m, n] + [n]`, the vector added to every row.
    BroadcastAdd,
    /// `[m, n] * [n]`, every row scaled elementwise by the vector.
    BroadcastMul,
    /// Tensor times a scalar node.
    ScaleBy,
    Relu,
    Sigmoid,
    /// Softmax along the last axis.
    Softmax,
    Mean,
    Sum,
    Log,
    /// Mean softmax cross-entropy of `[m, c]` logits against class labels.
    SoftmaxCrossEntropy(Vec<usize>),
    /// Multiplication by a constant.
    Scale(f64),
    StopGradient,
    Reshape(Vec<usize>),
}

impl Op {
    pub fn label(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::BroadcastAdd => "broadcast_add",
            Op::BroadcastMul => "broadcast_mul",
            Op::ScaleBy => "scale_by",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Log => "log",
            Op::SoftmaxCrossEntropy(_) => "softmax_cross_entropy",
            Op::Scale(_) => "scale",
            Op::StopGradient => "stop_gradient",
            Op::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::MatMul | Op::Add | Op::Mul | Op::BroadcastAdd | Op::BroadcastMul | Op::ScaleBy => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Op {
    type Err = Error;

    /// Parses a parameter-free op label. Leaves are created through
    /// [`Tape::leaf`], not parsed.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => Op::MatMul,
            "add" => Op::Add,
            "mul" | "multiply" => Op::Mul,
            "broadcast_add" => Op::BroadcastAdd,
            "broadcast_mul" => Op::BroadcastMul,
            "scale_by" => Op::ScaleBy,
            "relu" => Op::Relu,
            "sigmoid" => Op::Sigmoid,
            "softmax" => Op::Softmax,
            "mean" => Op::Mean,
            "sum" => Op::Sum,
            "log" => Op::Log,
            "stop_gradient" => Op::StopGradient,
            "scale" | "softmax_cross_entropy" | "reshape" => {
                return Err(Error::OpNeedsParameters(s.to_string()));
            }
            other => return Err(Error::UnknownOp(other.to_string())),
        })
    }
}

/// Deliberate corruption of a derivative rule. Only used to check that the
/// gradient checker notices broken backward passes.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    SigmoidDerivative,
}

#[derive(Debug, Clone)]
pub struct TapeNode {
    id: NodeId,
    op: Op,
    parents: Vec<NodeId>,
    values: Tensor,
    adjoint: Option<Tensor>,
    requires_grad: bool,
    grad_blocked: bool,
}

impl TapeNode {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    /// Adjoint from the most recent backward pass, if any.
    pub fn adjoint(&self) -> Option<&Tensor> {
        self.adjoint.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad_blocked(&self) -> bool {
        self.grad_blocked
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TapeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&TapeNode> {
        self.nodes.get(id.0).ok_or(Error::InvalidNode(id.0))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].values
    }

    /// Adjoint of `id` after [`Tape::backward`]; zero for nodes the root does
    /// not depend on or that sit behind a stop-gradient.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|n| n.adjoint.as_ref())
    }

    pub fn leaf(&mut self, values: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, Vec::new(), values, requires_grad, false)
    }

    pub fn param(&mut self, values: Tensor) -> NodeId {
        self.leaf(values, true)
    }

    pub fn constant(&mut self, values: Tensor) -> NodeId {
        self.leaf(values, false)
    }

    fn push(
        &mut self,
        op: Op,
        parents: Vec<NodeId>,
        values: Tensor,
        requires_grad: bool,
        grad_blocked: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(TapeNode {
            id,
            op,
            parents,
            values,
            adjoint: None,
            requires_grad,
            grad_blocked,
        });
        id
    }

    /// Evaluates `op` on the parents' values and appends the result.
    pub fn record(&mut self, op: Op, parents: &[NodeId]) -> Result<NodeId> {
        if op == Op::Leaf {
            return Err(Error::UnknownOp("leaf (use Tape::leaf)".into()));
        }
        if parents.len() != op.arity() {
            return Err(Error::LengthMismatch {
                what: "op arity",
                left: parents.len(),
                right: op.arity(),
            });
        }
        for p in parents {
            if p.0 >= self.nodes.len() {
                return Err(Error::InvalidNode(p.0));
            }
        }
        let values = self.forward(&op, parents)?;
        let blocked = op == Op::StopGradient;
        let requires_grad = !blocked && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(op, parents.to_vec(), values, requires_grad, blocked))
    }

    /// Records an op given by its textual label.
    pub fn record_named(&mut self, label: &str, parents: &[NodeId]) -> Result<NodeId> {
        let op: Op = label.parse()?;
        self.record(op, parents)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul, &[a, b])
    }
    pub fn broadcast_add(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::BroadcastAdd, &[a, row])
    }
    pub fn broadcast_mul(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::BroadcastMul, &[a, row])
    }
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.record(Op::ScaleBy, &[a, s])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid, &[a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Softmax, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Mean, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.record(Op::Scale(c), &[a])
    }
    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::StopGradient, &[a])
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.record(Op::Reshape(shape.to_vec()), &[a])
    }
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.record(Op::SoftmaxCrossEntropy(labels.to_vec()), &[logits])
    }

    fn forward(&self, op: &Op, parents: &[NodeId]) -> Result<Tensor> {
        let a = &self.nodes[parents[0].0].values;
        let b = parents.get(1).map(|p| &self.nodes[p.0].values);
        let mismatch = |op: &'static str, b: &Tensor| Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not recorded"),
            Op::MatMul => {
                let b = b.unwrap();
                let (m, k) = a.dims2().ok_or_else(|| mismatch("matmul", b))?;
                let (k2, n) = b.dims2().ok_or_else(|| mismatch("matmul", b))?;
                if k != k2 {
                    return Err(mismatch("matmul", b));
                }
                let mut out = vec![0.0; m * n];
                gemm(a.data(), (m, k), false, b.data(), (k, n), false, &mut out, false);
                Tensor::new(vec![m, n], out)?
            }
            Op::Add | Op::Mul => {
                let b = b.unwrap();
                if a.shape() != b.shape() {
                    return Err(mismatch(op.label(), b));
                }
                let data = if *op == Op::Add {
                    a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
                } else {
                    a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
                };
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::BroadcastAdd | Op::BroadcastMul => {
                let b = b.unwrap();
                let (_, n) = a.dims2().ok_or_else(|| mismatch(op.label(), b))?;
                if b.shape() != [n] {
                    return Err(mismatch(op.label(), b));
                }
                let row = b.data();
                let data = a
                    .data()
                    .chunks(n)
                    .flat_map(|r| {
                        r.iter().zip(row).map(|(x, y)| {
                            if *op == Op::BroadcastAdd {
                                x + y
                            } else {
                                x * y
                            }
                        })
                    })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::ScaleBy => {
                let b = b.unwrap();
                if !b.is_scalar() {
                    return Err(mismatch("scale_by", b));
                }
                let s = b.item();
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x * s).collect())?
            }
            Op::Relu => map(a, |x| x.max(0.0)),
            Op::Sigmoid => map(a, sigmoid),
            Op::Log => map(a, f64::ln),
            Op::Scale(c) => map(a, |x| x * c),
            Op::StopGradient => a.clone(),
            Op::Softmax => {
                let n = *a.shape().last().ok_or_else(|| Error::ShapeMismatch {
                    op: "softmax",
                    left: a.shape().to_vec(),
                    right: vec![],
                })?;
                let mut data = a.data().to_vec();
                if n > 0 {
                    data.chunks_mut(n).for_each(softmax_in_place);
                }
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::Sum => Tensor::scalar(a.data().iter().sum()),
            Op::Mean => {
                if a.is_empty() {
                    return Err(Error::Empty("mean"));
                }
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::Reshape(shape) => {
                if shape.iter().product::<usize>() != a.len() || shape.len() > 2 {
                    return Err(Error::ShapeMismatch {
                        op: "reshape",
                        left: a.shape().to_vec(),
                        right: shape.clone(),
                    });
                }
                a.clone().reshaped(shape.clone())
            }
            Op::SoftmaxCrossEntropy(labels) => {
                let (m, c) = a.dims2().ok_or_else(|| Error::ShapeMismatch {
                    op: "softmax_cross_entropy",
                    left: a.shape().to_vec(),
                    right: vec![labels.len()],
                })?;
                if m != labels.len() {
                    return Err(Error::ShapeMismatch {
                        op: "softmax_cross_entropy",
                        left: a.shape().to_vec(),
                        right: vec![labels.len()],
                    });
                }
                if m == 0 {
                    return Err(Error::Empty("softmax_cross_entropy"));
                }
                let mut total = 0.0;
                for (row, &y) in a.data().chunks(c).zip(labels) {
                    if y >= c {
                        return Err(Error::LabelOutOfRange {
                            label: y,
                            num_classes: c,
                        });
                    }
                    total += log_sum_exp(row) - row[y];
                }
                Tensor::scalar(total / m as f64)
            }
        })
    }

    /// Computes adjoints of every node with respect to the scalar `root`.
    ///
    /// Adjoints from a previous call are discarded first, so repeated calls on
    /// the same tape give identical results.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_shape = self.node(root)?.shape().to_vec();
        if self.nodes[root.0].values.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(out_adj) = adj[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad && !node.grad_blocked && node.op != Op::Leaf {
                self.propagate(node, &out_adj, &mut adj);
            }
            adj[i] = Some(out_adj);
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            let shape = node.values.shape().to_vec();
            node.adjoint = Some(match a {
                Some(data) => Tensor::new(shape, data).expect("adjoint matches node shape"),
                None => Tensor::zeros(&shape),
            });
        }
        Ok(())
    }

    fn propagate(&self, node: &TapeNode, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let pid: Vec<usize> = node.parents.iter().map(|p| p.0).collect();
        let wants = |k: usize| self.nodes[pid[k]].requires_grad;
        let val = |k: usize| &self.nodes[pid[k]].values;
        let y = &node.values;

        let mut send = |k: usize, contribution: Vec<f64>| {
            let slot = &mut adj[pid[k]];
            match slot {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                None => *slot = Some(contribution),
            }
        };

        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul => {
                let (m, k) = val(0).dims2().unwrap();
                let (_, n) = val(1).dims2().unwrap();
                if wants(0) {
                    let mut da = vec![0.0; m * k];
                    gemm(g, (m, n), false, val(1).data(), (k, n), true, &mut da, false);
                    send(0, da);
                }
                if wants(1) {
                    let mut db = vec![0.0; k * n];
                    gemm(val(0).data(), (m, k), true, g, (m, n), false, &mut db, false);
                    send(1, db);
                }
            }
            Op::Add => {
                for k in 0..2 {
                    if wants(k) {
                        send(k, g.to_vec());
                    }
                }
            }
            Op::Mul => {
                if wants(0) {
                    send(0, g.iter().zip(val(1).data()).map(|(g, b)| g * b).collect());
                }
                if wants(1) {
                    send(1, g.iter().zip(val(0).data()).map(|(g, a)| g * a).collect());
                }
            }
            Op::BroadcastAdd => {
                let n = val(1).len();
                if wants(0) {
                    send(0, g.to_vec());
                }
                if wants(1) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    send(1, db);
                }
            }
            Op::BroadcastMul => {
                let n = val(1).len();
                let row = val(1).data();
                if wants(0) {
                    let da = g
                        .chunks(n)
                        .flat_map(|gr| gr.iter().zip(row).map(|(g, b)| g * b))
                        .collect();
                    send(0, da);
                }
                if wants(1) {
                    let mut db = vec![0.0; n];
                    for (gr, ar) in g.chunks(n).zip(val(0).data().chunks(n)) {
                        for j in 0..n {
                            db[j] += gr[j] * ar[j];
                        }
                    }
                    send(1, db);
                }
            }
            Op::ScaleBy => {
                let s = val(1).item();
                if wants(0) {
                    send(0, g.iter().map(|g| g * s).collect());
                }
                if wants(1) {
                    let ds = g.iter().zip(val(0).data()).map(|(g, a)| g * a).sum();
                    send(1, vec![ds]);
                }
            }
            Op::Relu => {
                let da = g
                    .iter()
                    .zip(val(0).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                send(0, da);
            }
            Op::Sigmoid => {
                let corrupt = self.fault == Some(Fault::SigmoidDerivative);
                let da = g
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| {
                        let d = s * (1.0 - s);
                        g * if corrupt { 1.5 * d } else { d }
                    })
                    .collect();
                send(0, da);
            }
            Op::Log => {
                send(0, g.iter().zip(val(0).data()).map(|(g, x)| g / x).collect());
            }
            Op::Scale(c) => {
                send(0, g.iter().map(|g| g * c).collect());
            }
            Op::Softmax => {
                let n = *y.shape().last().unwrap();
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(n).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    da.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                send(0, da);
            }
            Op::Sum => send(0, vec![g[0]; val(0).len()]),
            Op::Mean => {
                let n = val(0).len();
                send(0, vec![g[0] / n as f64; n]);
            }
            Op::Reshape(_) => send(0, g.to_vec()),
            Op::SoftmaxCrossEntropy(labels) => {
                let (m, c) = val(0).dims2().unwrap();
                let scale = g[0] / m as f64;
                let mut da = val(0).data().to_vec();
                for (row, &label) in da.chunks_mut(c).zip(labels) {
                    softmax_in_place(row);
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(0, da);
            }
        }
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("elementwise map preserves shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}
