//! Class-balanced batch sampling and last-wave swap augmentation of
//! positive samples.

use serde::{Deserialize, Serialize};

use crate::data::EncodedCohort;
use crate::diffcore::{Matrix, Rng};
use crate::error::{Error, Result};

/// Index lists for one epoch; every batch holds `batch_size / 2` positives
/// followed by `batch_size / 2` negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Vec<usize>>,
}

/// Samples `n_batches` balanced batches, each half drawn uniformly with
/// replacement from its class.
pub fn balanced_batches(labels: &[u8], batch_size: usize, n_batches: usize, rng: &mut Rng) -> Result<BatchPlan> {
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::Param(format!("batch_size must be positive and even, got {batch_size}")));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        match y {
            1 => pos.push(i),
            0 => neg.push(i),
            other => return Err(Error::Label(other)),
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Sampling(format!(
            "both classes must be present, got {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let half = batch_size / 2;
    let batches = (0..n_batches)
        .map(|_| {
            let mut batch = Vec::with_capacity(batch_size);
            batch.extend((0..half).map(|_| pos[rng.below(pos.len())]));
            batch.extend((0..half).map(|_| neg[rng.below(neg.len())]));
            batch
        })
        .collect();
    Ok(BatchPlan { batch_size, batches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Target multiple of the positive pool size, originals included.
    pub factor: usize,
    pub swap_frac: f64,
    /// Swap whole source columns (one-hot groups) instead of single
    /// encoded dimensions; `⌈swap_frac · groups⌉` columns are swapped.
    pub group_atomic: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            factor: 10,
            swap_frac: 0.05,
            group_atomic: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::Config("augmentation factor must be at least 1".into()));
        }
        if !(self.swap_frac > 0.0 && self.swap_frac < 1.0) {
            return Err(Error::Config(format!("swap_frac must be in (0, 1), got {}", self.swap_frac)));
        }
        Ok(())
    }

    /// Number of encoded positions replaced per sample in dimension-level mode.
    pub fn swap_count(&self, dim: usize) -> usize {
        (self.swap_frac * dim as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub sample: Matrix,
    /// Index (into the positive cohort) of the copied sample.
    pub parent: usize,
    /// Index of the sample whose last-wave values were copied in.
    pub donor: usize,
    /// Replaced encoded positions in the last wave, sorted.
    pub positions: Vec<usize>,
}

/// Generates `(factor − 1) · P` new positives from `P` positives.
///
/// Each new sample copies a parent A and overwrites a random subset of
/// A's last-wave values with those of a different donor B.
pub fn augment_depression(positives: &EncodedCohort, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<AugmentedSample>> {
    cfg.validate()?;
    if positives.labels.iter().any(|&y| y != 1) {
        return Err(Error::Augmentation("augmentation input must contain positives only".into()));
    }
    let p = positives.len();
    if p < 2 {
        return Err(Error::Augmentation(format!("need at least 2 positives, got {p}")));
    }
    let last = positives.waves - 1;
    let groups = positives.group_members();
    let n_new = (cfg.factor - 1) * p;
    let mut out = Vec::with_capacity(n_new);
    for _ in 0..n_new {
        let parent = rng.below(p);
        let mut donor = rng.below(p - 1);
        if donor >= parent {
            donor += 1;
        }
        let mut positions = if cfg.group_atomic {
            let k = (cfg.swap_frac * groups.len() as f64).ceil() as usize;
            rng.choose_distinct(groups.len(), k)
                .into_iter()
                .flat_map(|g| groups[g].iter().copied())
                .collect()
        } else {
            rng.choose_distinct(positives.dim, cfg.swap_count(positives.dim))
        };
        positions.sort_unstable();
        let mut sample = positives.samples[parent].clone();
        let source = positives.samples[donor].row(last);
        let target = sample.row_mut(last);
        for &j in &positions {
            target[j] = source[j];
        }
        out.push(AugmentedSample {
            sample,
            parent,
            donor,
            positions,
        });
    }
    Ok(out)
}
