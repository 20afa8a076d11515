use std::fmt;

use super::{EpochRecord, MetaConfig, RunLog, StepRecord, meta_step};
use crate::agent::{AgentState, BatchSizeCodec, SampleSet, select_best};
use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::model::{self, InnerParams, ModelSpec};
use crate::optim::OptimizerState;
use crate::rng::{self, Purpose};

/// Full state of one run: inner network, optimizer, agent, samplers and log.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: MetaConfig,
    codec: BatchSizeCodec,
    train: Dataset,
    val: Dataset,
    params: InnerParams,
    opt: OptimizerState,
    agent: AgentState,
    train_sampler: BatchSampler,
    val_sampler: BatchSampler,
    batch_size: usize,
    epochs_done: usize,
    last_samples: Option<SampleSet>,
    log: RunLog,
}

impl Trainer {
    pub fn new(config: MetaConfig, model: &ModelSpec, train: Dataset, val: Dataset) -> Result<Self> {
        config.validate()?;
        let num_classes = train.num_classes();
        if num_classes < 2 || train.labels().is_none() || val.labels().is_none() {
            return Err(Error::Config("training needs classification data with at least 2 classes".into()));
        }
        if val.dim() != train.dim() {
            return Err(Error::LengthMismatch {
                what: "validation vs training input width",
                left: val.dim(),
                right: train.dim(),
            });
        }
        let sizes = model.layer_sizes(train.dim(), num_classes.max(val.num_classes()));
        let params = InnerParams::init(&sizes, config.seed)?;
        let opt = OptimizerState::new(config.optimizer, config.lr, config.hyper_lr)?;
        let agent = AgentState::new(
            train.dim(),
            config.agent_hidden,
            config.n_samples,
            params.feature_dim(),
            config.seed,
        )?;
        let batch_size = config
            .milestones
            .get(&1)
            .copied()
            .unwrap_or(config.initial_batch_size)
            .min(train.len());
        let train_sampler = BatchSampler::with_purpose(train.len(), batch_size, config.seed, Purpose::TrainShuffle)?;
        let val_sampler = BatchSampler::with_purpose(
            val.len(),
            config.val_batch_size.min(val.len()),
            config.seed,
            Purpose::ValShuffle,
        )?;
        Ok(Self {
            codec: config.codec()?,
            config,
            train,
            val,
            params,
            opt,
            agent,
            train_sampler,
            val_sampler,
            batch_size,
            epochs_done: 0,
            last_samples: None,
            log: RunLog::default(),
        })
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn params(&self) -> &InnerParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut InnerParams {
        &mut self.params
    }

    pub fn agent(&self) -> &AgentState {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut AgentState {
        &mut self.agent
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.opt
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn last_samples(&self) -> Option<&SampleSet> {
        self.last_samples.as_ref()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    fn agent_active(&self, epoch: usize) -> bool {
        self.config.scheduler.uses_agent() && epoch > self.config.warmup_epochs
    }

    fn event(&mut self, msg: String) {
        log::warn!("{msg}");
        self.log.events.push(msg);
    }

    /// Trains one epoch at the current batch size. Each inner step is
    /// followed by one agent update while the agent is active.
    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epochs_done + 1;
        let active = self.agent_active(epoch);
        self.train_sampler.reset(epoch as u64);
        self.train_sampler.set_batch_size(self.batch_size)?;
        self.last_samples = None;

        let (mut loss_sum, mut meta_sum, mut t) = (0.0, 0.0, 0usize);
        while let Some(batch) = self.train_sampler.next_batch(&self.train)? {
            let (train_loss, grad) = model::loss_and_grad(&self.params, &batch.inputs, &batch.labels)?;
            if !train_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch} step {t}")));
            }
            self.opt.hd_update(&grad)?;
            let lr = self.opt.lr();
            self.opt.inner_step(&mut self.params, &grad)?;

            let mut record = StepRecord {
                epoch,
                t,
                train_loss,
                meta_loss: None,
                batch_size: self.batch_size,
                mixed_sample: None,
                candidate_batch_size: None,
                lr,
            };
            let mut failure = None;
            if active {
                match self.agent_update(epoch, t) {
                    Ok((meta_loss, mixed, candidate)) => {
                        record.meta_loss = Some(meta_loss);
                        record.mixed_sample = Some(mixed);
                        record.candidate_batch_size = Some(candidate);
                        meta_sum += meta_loss;
                    }
                    Err(e) => failure = Some(e),
                }
            }
            self.log.steps.push(record);
            if let Some(e) = failure {
                return Err(e);
            }
            loss_sum += train_loss;
            t += 1;
        }

        let (val_loss, val_acc) = model::evaluate(&self.params, &self.val)?;
        self.log.epochs.push(EpochRecord {
            epoch,
            batch_size: self.batch_size,
            train_loss: loss_sum / t as f64,
            meta_loss: active.then(|| meta_sum / t as f64),
            val_loss,
            val_acc,
            next_batch_size: self.batch_size,
            alpha_reset: None,
        });
        Ok(())
    }

    /// One agent step on the next validation batch. Returns `F`, the mixed
    /// sample and the decoded batch size of the currently preferred sample.
    fn agent_update(&mut self, epoch: usize, t: usize) -> Result<(f64, f64, usize)> {
        let vb = self.val_sampler.next_batch_cycling(&self.val)?;
        let outcome = meta_step(
            &mut self.agent,
            &self.params,
            &vb.inputs,
            &vb.labels,
            self.batch_size,
            &self.codec,
            self.config.zeta_phi,
            self.config.zeta_alpha,
        )?;
        if !outcome.applied {
            self.event(format!("epoch {epoch} step {t}: non-finite meta-gradient, agent update skipped"));
        }
        let best = select_best(&outcome.samples.samples, &self.agent.alpha)?;
        let result = (outcome.meta_loss, outcome.mixed_sample, self.codec.decode(best));
        self.last_samples = Some(outcome.samples);
        Ok(result)
    }

    /// Chooses the batch size for the next epoch and finishes the current one.
    pub fn epoch_boundary_update(&mut self) -> Result<()> {
        let epoch = self.epochs_done + 1;
        let mut next = self.batch_size;
        let mut alpha_reset = None;
        let kind = self.config.scheduler;

        if kind.uses_agent()
            && self.agent_active(epoch)
            && epoch.is_multiple_of(self.config.n_learn)
            && let Some(samples) = &self.last_samples
        {
            let best = select_best(&samples.samples, &self.agent.alpha)?;
            next = self.codec.decode(best);
            self.agent
                .reset_alpha(rng::derive_seed(self.config.seed, Purpose::AlphaReset, epoch as u64));
            alpha_reset = Some(self.agent.alpha.clone());
        }
        if kind.uses_milestones()
            && let Some(&b) = self.config.milestones.get(&(epoch + 1))
        {
            next = b;
        }
        if next > self.train.len() {
            self.event(format!(
                "epoch {epoch}: batch size {next} exceeds the {} training examples, clamped",
                self.train.len()
            ));
            next = self.train.len();
        }

        if let Some(record) = self.log.epochs.last_mut() {
            record.next_batch_size = next;
            record.alpha_reset = alpha_reset;
        }
        self.batch_size = next;
        self.epochs_done = epoch;
        Ok(())
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch()?;
            self.epoch_boundary_update()?;
            if let Some(e) = self.log.epochs.last() {
                log::info!(
                    "epoch {:>3}  B={:>3}  train {:.4}  val {:.4}  acc {:.4}  next B={}",
                    e.epoch,
                    e.batch_size,
                    e.train_loss,
                    e.val_loss,
                    e.val_acc,
                    e.next_batch_size
                );
            }
        }
        Ok(())
    }
}

/// A run that stopped early, with everything logged up to the failure.
#[derive(Debug)]
pub struct RunAbort {
    pub error: Error,
    pub log: RunLog,
}

impl fmt::Display for RunAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted after {} epochs ({} steps): {}",
            self.log.epochs.len(),
            self.log.steps.len(),
            self.error
        )
    }
}

impl std::error::Error for RunAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[allow(clippy::result_large_err)]
pub fn run_experiment(
    config: MetaConfig,
    model: &ModelSpec,
    train: Dataset,
    val: Dataset,
) -> std::result::Result<RunLog, RunAbort> {
    let mut trainer = Trainer::new(config, model, train, val).map_err(|error| RunAbort {
        error,
        log: RunLog::default(),
    })?;
    match trainer.run() {
        Ok(()) => Ok(trainer.into_log()),
        Err(error) => Err(RunAbort {
            error,
            log: trainer.into_log(),
        }),
    }
}
