//! One agent update from the validation meta-objective.

use crate::agent::{AgentNodes, AgentState, BatchSizeCodec, SampleSet};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{InnerParams, gated_forward_on};

/// Gradients of `F` with respect to every agent parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gate: Vec<f64>,
}

impl MetaGradients {
    /// Same order as [`AgentState::values_mut`].
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.alpha, &self.gate]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct MetaEvaluation {
    pub meta_loss: f64,
    pub mixed_sample: f64,
    pub samples: SampleSet,
    pub gradients: MetaGradients,
}

#[derive(Debug, Clone)]
pub struct MetaStepOutcome {
    pub meta_loss: f64,
    pub mixed_sample: f64,
    pub samples: SampleSet,
    pub gradients: MetaGradients,
    /// False when the gradients were non-finite and the update was skipped.
    pub applied: bool,
}

/// Evaluates `F = CE(gated_forward(w, X_val, σ(s), A_Φ), y_val)` and its
/// gradients with respect to `(φ, α, A_Φ)`. Inner weights are treated as
/// constants.
pub fn meta_gradients(
    agent: &AgentState,
    params: &InnerParams,
    x_val: &Tensor,
    y_val: &[usize],
    batch_size: usize,
    codec: &BatchSizeCodec,
) -> Result<MetaEvaluation> {
    let mut tape = Tape::new();
    let (f, nodes) = record_meta(&mut tape, agent, params, x_val, y_val, batch_size, codec)?;
    let meta_loss = tape.value(f).item();
    if !meta_loss.is_finite() {
        return Err(Error::NonFinite(format!("meta-objective F = {meta_loss}")));
    }
    tape.backward(f)?;
    let grad = |id| tape.grad(id).expect("backward ran").data().to_vec();
    Ok(MetaEvaluation {
        meta_loss,
        mixed_sample: tape.value(nodes.mixed).item(),
        samples: SampleSet {
            samples: tape.value(nodes.samples).data().to_vec(),
            origin_batch_size: batch_size,
        },
        gradients: MetaGradients {
            w1: grad(nodes.w1),
            b1: grad(nodes.b1),
            w2: grad(nodes.w2),
            b2: grad(nodes.b2),
            alpha: grad(nodes.alpha),
            gate: grad(nodes.gate),
        },
    })
}

/// Records `F` on `tape`, returning its node and the agent handles.
pub(crate) fn record_meta(
    tape: &mut Tape,
    agent: &AgentState,
    params: &InnerParams,
    x_val: &Tensor,
    y_val: &[usize],
    batch_size: usize,
    codec: &BatchSizeCodec,
) -> Result<(NodeId, AgentNodes)> {
    if agent.feature_dim() != params.feature_dim() {
        return Err(Error::LengthMismatch {
            what: "gate weights vs feature width",
            left: agent.feature_dim(),
            right: params.feature_dim(),
        });
    }
    let x = tape.constant(x_val.clone());
    let nodes = agent.record(tape, x, codec.center_logit(batch_size))?;
    let squashed = tape.sigmoid(nodes.mixed)?;
    let out = gated_forward_on(tape, params, x, squashed, nodes.gate)?;
    let f = tape.softmax_cross_entropy(out.logits, y_val)?;
    Ok((f, nodes))
}

/// Plain gradient descent on the agent: `ζ_φ` for `φ` and `A_Φ`, `ζ_α` for `α`.
#[allow(clippy::too_many_arguments)]
pub fn meta_step(
    agent: &mut AgentState,
    params: &InnerParams,
    x_val: &Tensor,
    y_val: &[usize],
    batch_size: usize,
    codec: &BatchSizeCodec,
    zeta_phi: f64,
    zeta_alpha: f64,
) -> Result<MetaStepOutcome> {
    let eval = meta_gradients(agent, params, x_val, y_val, batch_size, codec)?;
    let applied = eval.gradients.all_finite();
    if applied {
        let g = &eval.gradients;
        let phi_grad = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(&g.b2);
        for (v, d) in agent.phi_mut().zip(phi_grad) {
            *v -= zeta_phi * d;
        }
        for (v, d) in agent.alpha.iter_mut().zip(&g.alpha) {
            *v -= zeta_alpha * d;
        }
        for (v, d) in agent.gate.iter_mut().zip(&g.gate) {
            *v -= zeta_phi * d;
        }
    }
    Ok(MetaStepOutcome {
        meta_loss: eval.meta_loss,
        mixed_sample: eval.mixed_sample,
        samples: eval.samples,
        gradients: eval.gradients,
        applied,
    })
}
