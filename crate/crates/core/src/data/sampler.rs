use rand::seq::SliceRandom;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Without-replacement mini-batch sampler.
///
/// Each epoch is a fresh permutation drawn from a stream keyed by
/// `(seed, epoch)`. The final batch of an epoch may be short. The batch size
/// can only change between epochs.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    permutation: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    seed: u64,
    purpose: Purpose,
    epoch: u64,
    exhausted: bool,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::with_purpose(len, batch_size, seed, Purpose::TrainShuffle)
    }

    pub fn with_purpose(len: usize, batch_size: usize, seed: u64, purpose: Purpose) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("sampler over empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut sampler = Self {
            len,
            permutation: Vec::new(),
            cursor: 0,
            batch_size,
            seed,
            purpose,
            epoch: 0,
            exhausted: false,
        };
        sampler.reset(0);
        Ok(sampler)
    }

    /// Starts epoch `epoch` with a permutation keyed by `(seed, epoch)`.
    pub fn reset(&mut self, epoch: u64) {
        self.epoch = epoch;
        self.permutation = (0..self.len).collect();
        self.permutation
            .shuffle(&mut rng::keyed(self.seed, self.purpose, epoch));
        self.cursor = 0;
        self.exhausted = false;
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Number of batches in one epoch at the current batch size.
    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    /// Changes the batch size. Only allowed before the first batch of an
    /// epoch or once the epoch is used up.
    pub fn set_batch_size(&mut self, batch_size: usize) -> Result<()> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.cursor != 0 && self.cursor != self.len {
            return Err(Error::Config(format!(
                "batch size can only change between epochs (cursor at {} of {})",
                self.cursor, self.len
            )));
        }
        self.batch_size = batch_size;
        Ok(())
    }

    /// Next batch of indices, `Ok(None)` once at the end of the epoch, and an
    /// error if asked again without a reset.
    pub fn next_indices(&mut self) -> Result<Option<&[usize]>> {
        if self.exhausted {
            return Err(Error::SamplerExhausted);
        }
        if self.cursor >= self.len {
            self.exhausted = true;
            return Ok(None);
        }
        let start = self.cursor;
        self.cursor = (start + self.batch_size).min(self.len);
        Ok(Some(&self.permutation[start..self.cursor]))
    }

    pub fn next_batch(&mut self, data: &Dataset) -> Result<Option<Batch>> {
        let labels = data
            .labels()
            .ok_or(Error::Config("mini-batches need a classification dataset".into()))?;
        Ok(self.next_indices()?.map(|idx| Batch {
            indices: idx.to_vec(),
            inputs: data.inputs().select_rows(idx),
            labels: idx.iter().map(|&i| labels[i]).collect(),
        }))
    }

    /// Next batch, rolling over into a new epoch when the current one runs out.
    pub fn next_batch_cycling(&mut self, data: &Dataset) -> Result<Batch> {
        if self.cursor >= self.len {
            let next = self.epoch + 1;
            self.reset(next);
        }
        Ok(self.next_batch(data)?.expect("a freshly reset sampler has a batch"))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn epoch_sizes(s: &mut BatchSampler) -> (Vec<usize>, Vec<usize>) {
        let mut sizes = Vec::new();
        let mut seen = Vec::new();
        while let Some(b) = s.next_indices().unwrap() {
            sizes.push(b.len());
            seen.extend_from_slice(b);
        }
        seen.sort_unstable();
        (sizes, seen)
    }

    #[test]
    fn ten_by_three_gives_three_three_three_one() {
        let mut s = BatchSampler::new(10, 3, 1).unwrap();
        let (sizes, seen) = epoch_sizes(&mut s);
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(s.batches_per_epoch(), 4);
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let mut s = BatchSampler::new(7, 7, 2).unwrap();
        let b = s.next_indices().unwrap().unwrap().to_vec();
        let mut sorted = b.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert!(s.next_indices().unwrap().is_none());
    }

    #[test]
    fn exhaustion_then_error_until_reset() {
        let mut s = BatchSampler::new(4, 4, 0).unwrap();
        s.next_indices().unwrap();
        assert!(s.next_indices().unwrap().is_none());
        assert!(matches!(s.next_indices(), Err(Error::SamplerExhausted)));
        s.reset(1);
        assert!(s.next_indices().unwrap().is_some());
    }

    #[test]
    fn same_seed_same_sequence() {
        let seq = |seed| {
            let mut s = BatchSampler::new(20, 6, seed).unwrap();
            let mut out = Vec::new();
            for epoch in 0..3 {
                s.reset(epoch);
                while let Some(b) = s.next_indices().unwrap() {
                    out.push(b.to_vec());
                }
            }
            out
        };
        assert_eq!(seq(5), seq(5));
        assert_ne!(seq(5), seq(6));
    }

    #[test]
    fn batch_size_is_frozen_mid_epoch() {
        let mut s = BatchSampler::new(10, 3, 0).unwrap();
        assert!(s.set_batch_size(4).is_ok());
        s.next_indices().unwrap();
        assert!(s.set_batch_size(5).is_err());
    }

    proptest! {
        #[test]
        fn every_epoch_partitions_the_index_set(
            m in 1usize..200,
            sizes in proptest::collection::vec(1usize..64, 1..5),
            seed in any::<u64>(),
        ) {
            let mut s = BatchSampler::new(m, sizes[0], seed).unwrap();
            for (epoch, &b) in sizes.iter().enumerate() {
                s.reset(epoch as u64);
                s.set_batch_size(b).unwrap();
                let (batch_sizes, seen) = epoch_sizes(&mut s);
                prop_assert_eq!(seen, (0..m).collect::<Vec<_>>());
                prop_assert!(batch_sizes[..batch_sizes.len() - 1].iter().all(|&x| x == b));
                prop_assert_eq!(batch_sizes.len(), m.div_ceil(b));
            }
        }
    }
}
