use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }
}

/// Scenario indices of the training partition (sorted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainIndices(Vec<usize>);

/// Scenario indices of the held-out test partition (sorted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestIndices(Vec<usize>);

impl TrainIndices {
    /// Wrap indices as a training partition without going through
    /// [`split_dataset`]; for tests and for datasets that are all-training.
    pub fn new_unchecked(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Seeded sub-partition into (fit, validation) sets, both still training data.
    pub fn holdout(&self, fit_fraction: f64, seed: u64) -> Result<(TrainIndices, TrainIndices)> {
        let (a, b) = partition(&self.0, fit_fraction, seed)?;
        Ok((TrainIndices(a), TrainIndices(b)))
    }
}

impl TestIndices {
    /// Wrap indices as an evaluation set, e.g. a separately generated dataset
    /// evaluated in full.
    pub fn new_unchecked(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: TrainIndices,
    pub test: TestIndices,
}

fn partition(items: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if items.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scenarios to split, got {}",
            items.len()
        )));
    }
    let m = items.len();
    let n_train = ((m as f64 * fraction).round() as usize).clamp(1, m - 1);
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut seed::rng(seed));
    let mut test = shuffled.split_off(n_train);
    shuffled.sort_unstable();
    test.sort_unstable();
    Ok((shuffled, test))
}

/// Seeded shuffle of `0..n_scenarios`, partitioned into train and test.
pub fn split_dataset(n_scenarios: usize, spec: &SplitSpec) -> Result<Split> {
    let all: Vec<usize> = (0..n_scenarios).collect();
    let (train, test) = partition(&all, spec.train_fraction, spec.seed)?;
    Ok(Split {
        train: TrainIndices(train),
        test: TestIndices(test),
    })
}

/// One cross-validation fold: both halves are drawn from the training partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: TrainIndices,
    pub validation: TrainIndices,
}

/// `k` folds over a seeded shuffle; validation folds differ in size by at most one.
pub fn kfold_indices(train: &TrainIndices, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = train.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k ≥ 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {n} available training scenarios"
        )));
    }
    let mut shuffled = train.0.clone();
    shuffled.shuffle(&mut seed::rng(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut validation = shuffled[start..start + size].to_vec();
        let mut rest: Vec<usize> = shuffled[..start]
            .iter()
            .chain(&shuffled[start + size..])
            .copied()
            .collect();
        validation.sort_unstable();
        rest.sort_unstable();
        folds.push(Fold {
            train: TrainIndices(rest),
            validation: TrainIndices(validation),
        });
        start += size;
    }
    Ok(folds)
}
