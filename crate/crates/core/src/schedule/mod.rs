//! The hyper-learning loop and the baseline batch-size schedulers.
//!
//! Every inner step is followed (when the agent is active) by one agent
//! update on a fresh validation mini-batch, using the post-step inner
//! weights. At epoch boundaries the scheduler decides the next batch size.

mod runlog;
mod meta;
mod trainer;

pub use runlog::{EpochRecord, RunLog, StepRecord};
pub(crate) use meta::record_meta;
pub use meta::{MetaEvaluation, MetaGradients, MetaStepOutcome, meta_gradients, meta_step};
pub use trainer::{RunAbort, Trainer, run_experiment};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{self, BatchSizeCodec};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    /// Fixed batch size.
    #[serde(rename = "constant")]
    Constant,
    /// Batch size read from the milestone table.
    #[serde(rename = "milestone")]
    Milestone,
    /// Batch size chosen by the agent.
    #[serde(rename = "arbiter")]
    Arbiter,
    /// Agent search between milestones; the table wins at milestone epochs.
    #[serde(rename = "hybrid")]
    Hybrid,
    /// Agent scheduling on top of a hypergradient-descent optimizer.
    #[serde(rename = "arbiter+hd")]
    ArbiterHd,
}

impl SchedulerKind {
    pub fn uses_agent(self) -> bool {
        matches!(self, Self::Arbiter | Self::Hybrid | Self::ArbiterHd)
    }

    pub fn uses_milestones(self) -> bool {
        matches!(self, Self::Milestone | Self::Hybrid)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Milestone => "milestone",
            Self::Arbiter => "arbiter",
            Self::Hybrid => "hybrid",
            Self::ArbiterHd => "arbiter+hd",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => Self::Constant,
            "milestone" => Self::Milestone,
            "arbiter" => Self::Arbiter,
            "hybrid" => Self::Hybrid,
            "arbiter+hd" => Self::ArbiterHd,
            other => return Err(Error::Config(format!("unknown scheduler `{other}`"))),
        })
    }
}

/// Everything the loop needs besides data and architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub scheduler: SchedulerKind,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// Inner learning rate `η` (initial value for HD optimizers).
    pub lr: f64,
    /// Hypergradient step `β` for HD optimizers.
    pub hyper_lr: f64,
    pub initial_batch_size: usize,
    pub b_min: usize,
    pub b_max: usize,
    /// Sample count `N`.
    pub n_samples: usize,
    /// Epochs between batch-size updates and `α` resets.
    pub n_learn: usize,
    pub zeta_phi: f64,
    pub zeta_alpha: f64,
    /// Validation mini-batch size `V` for the meta-objective.
    pub val_batch_size: usize,
    pub agent_hidden: usize,
    /// Epoch (1-based) → batch size used from that epoch on.
    pub milestones: BTreeMap<usize, usize>,
    /// Epochs trained before the agent starts adapting.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            scheduler: SchedulerKind::Arbiter,
            optimizer: OptimizerKind::Sgd,
            epochs: 30,
            lr: 0.1,
            hyper_lr: 0.0,
            initial_batch_size: 128,
            b_min: agent::DEFAULT_B_MIN,
            b_max: agent::DEFAULT_B_MAX,
            n_samples: agent::DEFAULT_SAMPLES,
            n_learn: 1,
            zeta_phi: 1e-3,
            zeta_alpha: 1e-2,
            val_batch_size: 128,
            agent_hidden: agent::DEFAULT_HIDDEN,
            milestones: BTreeMap::new(),
            warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn codec(&self) -> Result<BatchSizeCodec> {
        BatchSizeCodec::new(self.b_min, self.b_max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [("zeta_phi", self.zeta_phi), ("zeta_alpha", self.zeta_alpha), ("hyper_lr", self.hyper_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.n_learn == 0 {
            return bad("n_learn must be at least 1".into());
        }
        if self.n_samples == 0 || self.agent_hidden == 0 || self.val_batch_size == 0 {
            return bad("n_samples, agent_hidden and val_batch_size must be positive".into());
        }
        if self.initial_batch_size == 0 {
            return bad("initial_batch_size must be at least 1".into());
        }
        let codec = self.codec()?;
        if self.scheduler.uses_agent()
            && !(codec.min()..=codec.max()).contains(&self.initial_batch_size)
        {
            return bad(format!(
                "initial_batch_size {} outside [{}, {}]",
                self.initial_batch_size,
                codec.min(),
                codec.max()
            ));
        }
        if self.scheduler.uses_milestones() && self.milestones.is_empty() {
            return bad(format!("scheduler `{}` needs a milestone table", self.scheduler));
        }
        for (&epoch, &b) in &self.milestones {
            if epoch == 0 || b == 0 {
                return bad(format!("milestone {epoch}:{b} must have positive epoch and batch size"));
            }
            if self.scheduler == SchedulerKind::Hybrid && !(codec.min()..=codec.max()).contains(&b) {
                return bad(format!("milestone batch size {b} outside [{}, {}]", codec.min(), codec.max()));
            }
        }
        if self.scheduler == SchedulerKind::ArbiterHd && !self.optimizer.is_hd() {
            return bad(format!("scheduler `arbiter+hd` needs an HD optimizer, got `{}`", self.optimizer));
        }
        Ok(())
    }
}
