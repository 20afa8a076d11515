use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based epoch.
    pub epoch: usize,
    /// 0-based step within the epoch.
    pub t: usize,
    pub train_loss: f64,
    pub meta_loss: Option<f64>,
    pub batch_size: usize,
    pub mixed_sample: Option<f64>,
    /// Decoded batch size of the currently highest-weighted sample.
    pub candidate_batch_size: Option<usize>,
    /// Learning rate used for this step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batch_size: usize,
    pub train_loss: f64,
    pub meta_loss: Option<f64>,
    pub val_loss: f64,
    pub val_acc: f64,
    pub next_batch_size: usize,
    /// `α` drawn at this epoch's boundary, if it was reset.
    pub alpha_reset: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Warnings and skipped updates, in order of occurrence.
    pub events: Vec<String>,
}

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.epochs.is_empty()
    }

    /// Batch size used in each epoch.
    pub fn batch_sizes(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.batch_size).collect()
    }

    pub fn lr_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lr).collect()
    }

    pub fn steps_in_epoch(&self, epoch: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.epoch == epoch)
    }
}
