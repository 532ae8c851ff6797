use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Maximum number of redraws when the initial labeled set touches one class.
pub const INIT_POOL_RETRIES: usize = 100;

/// Partition of the training indices into labeled and unlabeled sets.
///
/// `held_out` collects annotated samples diverted to an incremental test set;
/// it is empty in fixed test-set mode. All three lists are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    held_out: Vec<usize>,
    iteration: usize,
}

impl PoolState {
    /// Rebuilds a pool from stored parts. Lists are sorted and must be disjoint.
    pub fn from_parts(
        mut labeled: Vec<usize>,
        mut unlabeled: Vec<usize>,
        mut held_out: Vec<usize>,
        iteration: usize,
    ) -> Result<Self> {
        labeled.sort_unstable();
        unlabeled.sort_unstable();
        held_out.sort_unstable();
        let mut all: Vec<usize> = labeled
            .iter()
            .chain(&unlabeled)
            .chain(&held_out)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::InvalidDataset("pool sets overlap".into()));
        }
        Ok(Self {
            labeled,
            unlabeled,
            held_out,
            iteration,
        })
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn held_out(&self) -> &[usize] {
        &self.held_out
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn advance(&mut self) {
        self.iteration += 1;
    }

    /// Moves `batch` from the unlabeled set to the labeled set.
    pub fn annotate(&mut self, batch: &[usize]) -> Result<()> {
        self.take_unlabeled(batch)?;
        self.labeled.extend_from_slice(batch);
        self.labeled.sort_unstable();
        Ok(())
    }

    /// Moves `samples` from the unlabeled set to the held-out set.
    pub fn divert(&mut self, samples: &[usize]) -> Result<()> {
        self.take_unlabeled(samples)?;
        self.held_out.extend_from_slice(samples);
        self.held_out.sort_unstable();
        Ok(())
    }

    /// Moves labeled samples to the held-out set.
    pub fn divert_labeled(&mut self, samples: &[usize]) -> Result<()> {
        let take: BTreeSet<usize> = samples.iter().copied().collect();
        if take.len() != samples.len() || take.iter().any(|i| self.labeled.binary_search(i).is_err()) {
            return Err(Error::InvalidDataset("diverted index is not labeled".into()));
        }
        self.labeled.retain(|i| !take.contains(i));
        self.held_out.extend_from_slice(samples);
        self.held_out.sort_unstable();
        Ok(())
    }

    fn take_unlabeled(&mut self, batch: &[usize]) -> Result<()> {
        let take: BTreeSet<usize> = batch.iter().copied().collect();
        if take.len() != batch.len() {
            return Err(Error::InvalidDataset("duplicate index in batch".into()));
        }
        if let Some(i) = take.iter().find(|i| self.unlabeled.binary_search(i).is_err()) {
            return Err(Error::InvalidDataset(format!("index {i} is not unlabeled")));
        }
        self.unlabeled.retain(|i| !take.contains(i));
        Ok(())
    }

    /// True when the three sets are disjoint and cover exactly `train`.
    pub fn is_partition_of(&self, train: &[usize]) -> bool {
        let mut all: Vec<usize> = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.held_out)
            .copied()
            .collect();
        all.sort_unstable();
        let mut t = train.to_vec();
        t.sort_unstable();
        all == t
    }
}

/// Draws the initial labeled set uniformly without replacement.
///
/// When the draw covers a single class although two are available, it is
/// redrawn up to [`INIT_POOL_RETRIES`] times; the last draw is kept.
pub fn init_pool(
    train: &[usize],
    labels: &[usize],
    start_size: usize,
    seed: u64,
) -> Result<PoolState> {
    if start_size > train.len() {
        return Err(Error::StartSizeTooLarge {
            start: start_size,
            train: train.len(),
        });
    }
    let classes_available = train
        .iter()
        .map(|&i| labels[i])
        .collect::<BTreeSet<_>>()
        .len();
    let want_two = start_size >= 2 && classes_available >= 2;

    let mut chosen = Vec::new();
    for attempt in 0..INIT_POOL_RETRIES {
        let mut rng = seed::rng(seed::mix(&[seed, attempt as u64]));
        chosen = rand::seq::index::sample(&mut rng, train.len(), start_size)
            .into_iter()
            .map(|p| train[p])
            .collect();
        let distinct = chosen.iter().map(|&i| labels[i]).collect::<BTreeSet<_>>().len();
        if !want_two || distinct >= 2 {
            break;
        }
    }
    let picked: BTreeSet<usize> = chosen.iter().copied().collect();
    let unlabeled = train.iter().copied().filter(|i| !picked.contains(i)).collect();
    PoolState::from_parts(chosen, unlabeled, Vec::new(), 0)
}
