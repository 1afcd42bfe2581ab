//! Subject-level train/test splits.

use std::collections::BTreeSet;

use super::dataset::FaceDataset;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    /// Sorted.
    pub train_subjects: Vec<u32>,
    /// Sorted, disjoint from `train_subjects`.
    pub test_subjects: Vec<u32>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_disjoint(&self) -> bool {
        let train: BTreeSet<_> = self.train_subjects.iter().collect();
        self.test_subjects.iter().all(|s| !train.contains(s))
    }
}

fn shuffled_subjects(ds: &FaceDataset, seed: u64) -> Vec<u32> {
    let mut subjects = ds.subjects();
    SplitMix64::new(seed).shuffle(&mut subjects);
    subjects
}

fn spec_from(mut test: Vec<u32>, all: &[u32], seed: u64) -> SplitSpec {
    test.sort_unstable();
    let mut train: Vec<u32> = all.iter().copied().filter(|s| test.binary_search(s).is_err()).collect();
    train.sort_unstable();
    SplitSpec {
        train_subjects: train,
        test_subjects: test,
        seed,
    }
}

/// Hold out `n_holdout` subjects drawn without replacement.
pub fn split_subjects(ds: &FaceDataset, n_holdout: usize, seed: u64) -> Result<SplitSpec> {
    let subjects = shuffled_subjects(ds, seed);
    if n_holdout >= subjects.len() {
        return Err(Error::Data(format!(
            "cannot hold out {n_holdout} of {} subjects",
            subjects.len()
        )));
    }
    Ok(spec_from(subjects[..n_holdout].to_vec(), &subjects, seed))
}

/// `k` subject-disjoint folds; fold `i` tests on its own subjects. Fold sizes
/// differ by at most one.
pub fn kfold(ds: &FaceDataset, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 {
        return Err(Error::Data("k must be ≥ 2".into()));
    }
    let subjects = shuffled_subjects(ds, seed);
    let n = subjects.len();
    if k > n {
        return Err(Error::Data(format!("k = {k} exceeds the {n} available subjects")));
    }
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = n / k + usize::from(i < n % k);
        folds.push(spec_from(subjects[start..start + size].to_vec(), &subjects, seed));
        start += size;
    }
    Ok(folds)
}
