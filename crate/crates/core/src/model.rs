//! The inner network: a ReLU MLP whose last hidden layer provides the
//! high-level features `h` that the agent's gate modulates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Hidden layer widths. The last width is the feature dimension `f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: vec![64, 32] }
    }
}

impl ModelSpec {
    pub fn layer_sizes(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(num_classes);
        sizes
    }
}

/// Layered weights `w`. Every layer but the last is followed by a ReLU; the
/// output of the penultimate layer is the feature vector `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerParams {
    layers: Vec<Layer>,
}

impl InnerParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config("inner network needs at least one hidden layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (_, fan_out) = layer.weight.dims2().ok_or_else(|| Error::ShapeMismatch {
                op: "layer weight",
                left: layer.weight.shape().to_vec(),
                right: vec![],
            })?;
            if layer.bias.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    left: layer.weight.shape().to_vec(),
                    right: layer.bias.shape().to_vec(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                let next_in = next.weight.dims2().map(|(r, _)| r).unwrap_or(0);
                if next_in != fan_out {
                    return Err(Error::ShapeMismatch {
                        op: "layer composition",
                        left: layer.weight.shape().to_vec(),
                        right: next.weight.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    /// He-uniform weights and zero biases for layer widths `sizes`
    /// (input, hidden..., classes).
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut rng = rng::keyed(seed, Purpose::InnerInit, 0);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)).collect();
                Ok(Layer {
                    weight: Tensor::matrix(w[0], w[1], data)?,
                    bias: Tensor::zeros(&[w[1]]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::new(
            sizes
                .windows(2)
                .map(|w| Layer {
                    weight: Tensor::zeros(&[w[0], w[1]]),
                    bias: Tensor::zeros(&[w[1]]),
                })
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().bias.len()
    }

    /// Index of the layer whose activation is `h`.
    pub fn feature_layer_index(&self) -> usize {
        self.layers.len() - 2
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.feature_layer_index()].bias.len()
    }

    /// Total parameter count `d`.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in flattening order: per layer, weight then bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| {
            let Layer { weight, bias } = l;
            weight.data_mut().iter_mut().chain(bias.data_mut().iter_mut())
        })
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Weights are differentiable leaves.
    Trainable,
    /// Weights are leaves routed through stop-gradient: values flow forward,
    /// no adjoint reaches them.
    Blocked,
}

#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub logits: NodeId,
    /// Features `h` (`[B, f]`) for the plain pass, `ĥ` for the gated pass.
    pub features: NodeId,
    /// `(weight, bias)` leaves per layer.
    pub params: Vec<(NodeId, NodeId)>,
}

fn check_input(params: &InnerParams, shape: &[usize]) -> Result<()> {
    match shape {
        [_, d] if *d == params.input_dim() => Ok(()),
        _ => Err(Error::ShapeMismatch {
            op: "forward input",
            left: shape.to_vec(),
            right: params.layers[0].weight.shape().to_vec(),
        }),
    }
}

/// `(weight, bias)` node pair of one layer.
type LayerNodes = (NodeId, NodeId);

/// Records the network on `tape` up to the features `h`, returning the
/// (possibly blocked) weight nodes for every layer including the head.
fn features_on(
    tape: &mut Tape,
    params: &InnerParams,
    x: NodeId,
    mode: WeightMode,
) -> Result<(NodeId, Vec<LayerNodes>, Vec<LayerNodes>)> {
    check_input(params, tape.value(x).shape())?;
    let mut leaves = Vec::with_capacity(params.layers.len());
    let mut used = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let w = tape.param(layer.weight.clone());
        let b = tape.param(layer.bias.clone());
        leaves.push((w, b));
        used.push(match mode {
            WeightMode::Trainable => (w, b),
            WeightMode::Blocked => (tape.stop_gradient(w)?, tape.stop_gradient(b)?),
        });
    }
    let mut h = x;
    for &(w, b) in &used[..used.len() - 1] {
        let z = tape.matmul(h, w)?;
        let z = tape.broadcast_add(z, b)?;
        h = tape.relu(z)?;
    }
    Ok((h, leaves, used))
}

fn head_on(tape: &mut Tape, features: NodeId, (w, b): (NodeId, NodeId)) -> Result<NodeId> {
    let z = tape.matmul(features, w)?;
    tape.broadcast_add(z, b)
}

pub fn forward_on(tape: &mut Tape, params: &InnerParams, x: NodeId, mode: WeightMode) -> Result<ForwardNodes> {
    let (h, leaves, used) = features_on(tape, params, x, mode)?;
    let logits = head_on(tape, h, *used.last().unwrap())?;
    Ok(ForwardNodes {
        logits,
        features: h,
        params: leaves,
    })
}

/// Gated pass `ĥ = (A·s) ⊙ h + h` with one scalar `s` for the whole batch.
/// Inner weights are blocked; `s` and `gate` keep their gradients.
pub fn gated_forward_on(tape: &mut Tape, params: &InnerParams, x: NodeId, s: NodeId, gate: NodeId) -> Result<ForwardNodes> {
    let f = params.feature_dim();
    if tape.value(gate).shape() != [f] {
        return Err(Error::LengthMismatch {
            what: "gate weights vs feature width",
            left: tape.value(gate).len(),
            right: f,
        });
    }
    let (h, leaves, used) = features_on(tape, params, x, WeightMode::Blocked)?;
    let response = tape.scale_by(gate, s)?;
    let modulated = tape.broadcast_mul(h, response)?;
    let h_hat = tape.add(modulated, h)?;
    let logits = head_on(tape, h_hat, *used.last().unwrap())?;
    Ok(ForwardNodes {
        logits,
        features: h_hat,
        params: leaves,
    })
}

/// Plain forward pass returning `(logits [B, C], h [B, f])`.
pub fn forward(params: &InnerParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let out = forward_on(&mut tape, params, xn, WeightMode::Blocked)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.features).clone()))
}

/// Gated forward pass returning `(logits, ĥ)`.
pub fn gated_forward(params: &InnerParams, x: &Tensor, s: f64, gate: &[f64]) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let sn = tape.constant(Tensor::scalar(s));
    let gn = tape.constant(Tensor::vector(gate.to_vec()));
    let out = gated_forward_on(&mut tape, params, xn, sn, gn)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.features).clone()))
}

/// Mean softmax cross-entropy of `logits` against `labels`.
pub fn loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = tape.softmax_cross_entropy(l, labels)?;
    Ok(tape.value(out).item())
}

/// Mini-batch loss and its gradient with respect to every inner parameter,
/// flattened in [`InnerParams::values`] order.
pub fn loss_and_grad(params: &InnerParams, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let out = forward_on(&mut tape, params, xn, WeightMode::Trainable)?;
    let l = tape.softmax_cross_entropy(out.logits, labels)?;
    tape.backward(l)?;
    let mut grad = Vec::with_capacity(params.num_params());
    for (w, b) in out.params {
        grad.extend_from_slice(tape.grad(w).unwrap().data());
        grad.extend_from_slice(tape.grad(b).unwrap().data());
    }
    Ok((tape.value(l).item(), grad))
}

/// Mean loss and accuracy over a whole dataset, evaluated in chunks.
pub fn evaluate(params: &InnerParams, data: &Dataset) -> Result<(f64, f64)> {
    let labels = data
        .labels()
        .ok_or(Error::Config("evaluation needs a classification dataset".into()))?;
    const CHUNK: usize = 1024;
    let (mut total, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = data.inputs().select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (logits, _) = forward(params, &x)?;
        total += loss(&logits, &y)? * chunk.len() as f64;
        let c = logits.shape()[1];
        for (row, &label) in logits.data().chunks(c).zip(&y) {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            correct += (best == label) as usize;
        }
    }
    Ok((total / data.len() as f64, correct as f64 / data.len() as f64))
}
