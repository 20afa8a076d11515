//! Datasets, splits and mini-batch sampling.

mod idx;
mod sampler;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use sampler::{Batch, BatchSampler};
pub use synthetic::{Synthetic, SyntheticTask, make_synthetic, make_synthetic_with_noise};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(indices.iter().map(|&i| v[i]).collect()),
            Targets::Real(v) => Targets::Real(indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// `M` examples of dimension `D` with class labels or real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Targets,
    num_classes: usize,
}

impl Dataset {
    /// `num_classes` is ignored (stored as 0) for real-valued targets.
    pub fn new(inputs: Tensor, targets: Targets, num_classes: usize) -> Result<Self> {
        let (m, d) = inputs.dims2().ok_or_else(|| Error::ShapeMismatch {
            op: "dataset",
            left: inputs.shape().to_vec(),
            right: vec![targets.len()],
        })?;
        if m == 0 || d == 0 {
            return Err(Error::Empty("dataset"));
        }
        if m != targets.len() {
            return Err(Error::LengthMismatch {
                what: "inputs vs targets",
                left: m,
                right: targets.len(),
            });
        }
        if !inputs.all_finite() {
            return Err(Error::NonFinite("dataset inputs".into()));
        }
        let num_classes = match &targets {
            Targets::Classes(labels) => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                    return Err(Error::LabelOutOfRange {
                        label: bad,
                        num_classes,
                    });
                }
                num_classes
            }
            Targets::Real(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("dataset targets".into()));
                }
                0
            }
        };
        Ok(Self {
            inputs,
            targets,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dims2().map(|(_, d)| d).unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Class labels, or `None` for a regression dataset.
    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(v) => Some(v),
            Targets::Real(_) => None,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select(indices),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            val_fraction: 0.1,
            test_fraction: 0.4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Shuffled index sets `(train, val, test)`, disjoint and covering `0..m`.
    pub fn indices(&self, m: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let n_train = (m as f64 * self.train_fraction).round() as usize;
        let n_val = (m as f64 * self.val_fraction).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= m {
            return Err(Error::Config(format!(
                "dataset of {m} examples is too small for split {:?}",
                (self.train_fraction, self.val_fraction, self.test_fraction)
            )));
        }
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng::keyed(self.seed, Purpose::Split, 0));
        let test = perm.split_off(n_train + n_val);
        let val = perm.split_off(n_train);
        Ok((perm, val, test))
    }

    pub fn split(&self, data: &Dataset) -> Result<Splits> {
        let (train, val, test) = self.indices(data.len())?;
        Ok(Splits {
            train: data.subset(&train),
            val: data.subset(&val),
            test: data.subset(&test),
        })
    }
}
