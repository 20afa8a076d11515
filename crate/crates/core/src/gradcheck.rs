//! Finite-difference verification of the reverse-mode gradients.
//!
//! Each suite builds a small graph from random inputs, runs the backward
//! pass and compares every input gradient against central differences.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentState, BatchSizeCodec};
use crate::autodiff::{Fault, NodeId, Tape, Tensor};
use crate::error::Result;
use crate::model::{self, InnerParams};
use crate::rng::{self, Purpose};
use crate::schedule::record_meta;

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-6;
/// Magnitude floor in the relative-error denominator.
pub const FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suites: Vec<SuiteResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.suites.iter().map(|s| s.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{:<10} {:<10} checked {:>4}  max rel error {:.3e}",
                if s.passed() { "PASS" } else { "FAIL" },
                s.name,
                s.checked,
                s.max_rel_error
            )?;
        }
        write!(f, "tolerance {TOLERANCE:e}")
    }
}

/// Compares analytic gradients of the scalar built by `build` with central
/// differences in every entry of `inputs`. `build` returns the root and the
/// node of each input, in order.
pub fn check<F>(name: &'static str, inputs: &[Tensor], fault: Option<Fault>, build: F) -> Result<SuiteResult>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<(NodeId, Vec<NodeId>)>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let (root, nodes) = build(&mut tape, inputs)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&n| tape.grad(n).map(|g| g.data().to_vec()).unwrap_or_default())
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let (root, _) = build(&mut tape, values)?;
        Ok(tape.value(root).item())
    };
    let mut work = inputs.to_vec();
    let (mut checked, mut worst) = (0, 0.0_f64);
    for (k, grads) in analytic.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = x0 - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(grads.get(i).copied().unwrap_or(f64::NAN), numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            checked += 1;
        }
    }
    Ok(SuiteResult {
        name,
        checked,
        max_rel_error: worst,
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape matches data")
}

/// Every differentiable op composed into one scalar.
pub fn autodiff_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 1);
    let inputs = vec![
        random(&mut rng, &[3, 4], 1.0),
        random(&mut rng, &[4, 3], 1.0),
        random(&mut rng, &[3], 1.0),
        random(&mut rng, &[], 1.0),
    ];
    check("autodiff", &inputs, fault, |tape, v| {
        let x = tape.param(v[0].clone());
        let w = tape.param(v[1].clone());
        let r = tape.param(v[2].clone());
        let c = tape.param(v[3].clone());
        let z = tape.matmul(x, w)?;
        let z = tape.broadcast_add(z, r)?;
        let z = tape.broadcast_mul(z, r)?;
        let a = tape.sigmoid(z)?;
        let b = tape.relu(z)?;
        let m = tape.mul(a, b)?;
        let m = tape.add(m, a)?;
        let m = tape.scale_by(m, c)?;
        let p = tape.softmax(m)?;
        let l = tape.log(p)?;
        let l = tape.scale(l, -0.5)?;
        let l = tape.reshape(l, &[9])?;
        let mean = tape.mean(l)?;
        let ce = tape.softmax_cross_entropy(m, &[0, 2, 1])?;
        let total = tape.add(mean, ce)?;
        let tail = tape.sum(a)?;
        let tail = tape.scale(tail, 0.1)?;
        let root = tape.add(total, tail)?;
        Ok((root, vec![x, w, r, c]))
    })
}

const DIM: usize = 6;
const CLASSES: usize = 3;
const ROWS: usize = 5;

fn small_network(seed: u64) -> Result<(InnerParams, Tensor, Vec<usize>)> {
    let params = InnerParams::init(&[DIM, 5, 4, CLASSES], seed)?;
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 2);
    let x = random(&mut rng, &[ROWS, DIM], 1.0);
    let y = (0..ROWS).map(|i| i % CLASSES).collect();
    Ok((params, x, y))
}

fn small_agent(seed: u64, feature_dim: usize) -> Result<AgentState> {
    let mut agent = AgentState::new(DIM, 5, 4, feature_dim, seed)?;
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 3);
    for v in agent.values_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    Ok(agent)
}

/// The gated forward pass with respect to the gate weights and the scalar `s`.
pub fn gated_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let (params, x, y) = small_network(seed)?;
    let mut rng = rng::keyed(seed, Purpose::Synthetic, 4);
    let inputs = vec![random(&mut rng, &[params.feature_dim()], 1.0), random(&mut rng, &[], 2.0)];
    check("gated", &inputs, fault, |tape, v| {
        let gate = tape.param(v[0].clone());
        let s = tape.param(v[1].clone());
        let xn = tape.constant(x.clone());
        let u = tape.sigmoid(s)?;
        let out = model::gated_forward_on(tape, &params, xn, u, gate)?;
        let f = tape.softmax_cross_entropy(out.logits, &y)?;
        Ok((f, vec![gate, s]))
    })
}

fn with_values(v: &[Tensor]) -> AgentState {
    AgentState {
        w1: v[0].clone(),
        b1: v[1].clone(),
        w2: v[2].clone(),
        b2: v[3].clone(),
        alpha: v[4].data().to_vec(),
        gate: v[5].data().to_vec(),
    }
}

fn agent_inputs(agent: &AgentState) -> Vec<Tensor> {
    vec![
        agent.w1.clone(),
        agent.b1.clone(),
        agent.w2.clone(),
        agent.b2.clone(),
        Tensor::vector(agent.alpha.clone()),
        Tensor::vector(agent.gate.clone()),
    ]
}

/// The agent's mixed sample `s` with respect to `φ` and `α`.
pub fn agent_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let (params, x, _) = small_network(seed)?;
    let agent = small_agent(seed, params.feature_dim())?;
    let codec = BatchSizeCodec::default();
    let inputs = agent_inputs(&agent);
    check("agent", &inputs[..5], fault, |tape, v| {
        let mut full = v.to_vec();
        full.push(inputs[5].clone());
        let a = with_values(&full);
        let xn = tape.constant(x.clone());
        let nodes = a.record(tape, xn, codec.center_logit(128))?;
        Ok((nodes.mixed, vec![nodes.w1, nodes.b1, nodes.w2, nodes.b2, nodes.alpha]))
    })
}

/// The validation meta-objective with respect to every agent parameter.
pub fn meta_suite(seed: u64, fault: Option<Fault>) -> Result<SuiteResult> {
    let (params, x, y) = small_network(seed)?;
    let agent = small_agent(seed, params.feature_dim())?;
    let codec = BatchSizeCodec::default();
    check("meta", &agent_inputs(&agent), fault, |tape, v| {
        let a = with_values(v);
        let (f, n) = record_meta(tape, &a, &params, &x, &y, 128, &codec)?;
        Ok((f, vec![n.w1, n.b1, n.w2, n.b2, n.alpha, n.gate]))
    })
}

pub fn run(seed: u64, fault: Option<Fault>) -> Result<Report> {
    Ok(Report {
        suites: vec![
            autodiff_suite(seed, fault)?,
            gated_suite(seed, fault)?,
            agent_suite(seed, fault)?,
            meta_suite(seed, fault)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for seed in 0..3 {
            let report = run(seed, None).unwrap();
            assert!(report.passed(), "seed {seed}\n{report}");
        }
    }

    #[test]
    fn corrupted_sigmoid_is_caught() {
        let report = run(0, Some(Fault::SigmoidDerivative)).unwrap();
        assert!(!report.passed());
        assert!(!report.suites[0].passed());
        assert!(!report.suites[3].passed());
        assert!(report.suites[2].passed(), "agent path has no sigmoid");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-8, 0.0) - 1e-5).abs() < 1e-18);
    }
}
