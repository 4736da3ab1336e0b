//! Random balanced fold assignment for cross-fitting.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{domain, keyed_rng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Units in fold `j`, in increasing order.
    pub fn fold(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == j).collect()
    }

    /// Units outside fold `j`, in increasing order.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] != j).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Uniformly random partition of `0..n` into `k` folds whose sizes differ by
/// at most one. Deterministic given `seed`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 || k > n {
        return Err(Error::BadFoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, domain::FOLDS));
    let mut labels = alloc::vec![0; n];
    for (pos, &unit) in order.iter().enumerate() {
        labels[unit] = pos % k;
    }
    Ok(FoldAssignment { labels, k })
}
