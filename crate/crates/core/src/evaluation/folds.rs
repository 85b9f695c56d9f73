use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed::derive_seed;

/// Patient-level outer and inner fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub stratified: bool,
    pub outer: BTreeMap<String, usize>,
    /// `inner[f]` assigns every training patient of outer fold `f`.
    pub inner: Vec<BTreeMap<String, usize>>,
}

fn round_robin(order: &[String], k: usize) -> BTreeMap<String, usize> {
    order.iter().enumerate().map(|(i, p)| (p.clone(), i % k)).collect()
}

fn check(n: usize, k: usize, m: usize) -> Result<(), EvalError> {
    if k < 2 || m < 2 {
        return Err(EvalError::InvalidFolds(format!("k = {k} and m = {m} must both be at least 2")));
    }
    if n < k {
        return Err(EvalError::TooFewPatients { patients: n, folds: k });
    }
    // the smallest outer-train set has n - ceil(n / k) patients
    if n - n.div_ceil(k) < m {
        return Err(EvalError::TooFewPatients { patients: n, folds: k * m });
    }
    Ok(())
}

fn build(strata: Vec<Vec<String>>, k: usize, m: usize, seed: u64, stratified: bool) -> FoldPlan {
    let mut order = Vec::new();
    for (s, mut group) in strata.into_iter().enumerate() {
        group.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, s as u64])));
        order.extend(group);
    }
    let outer = round_robin(&order, k);
    let inner = (0..k)
        .map(|f| {
            let train: Vec<String> = order.iter().filter(|p| outer[*p] != f).cloned().collect();
            let mut shuffled = train;
            if !stratified {
                shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, f as u64])));
            }
            round_robin(&shuffled, m)
        })
        .collect();
    FoldPlan {
        k,
        m,
        seed,
        stratified,
        outer,
        inner,
    }
}

/// Shuffle patients with `seed`, then deal them round-robin into `k`
/// outer folds; each outer-train set is dealt into `m` inner folds.
pub fn grouped_kfold(patients: &[String], k: usize, m: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let unique: BTreeSet<&String> = patients.iter().collect();
    check(unique.len(), k, m)?;
    Ok(build(vec![unique.into_iter().cloned().collect()], k, m, seed, false))
}

/// Like [`grouped_kfold`] but deals each patient class separately so every
/// fold receives a balanced share of each class.
pub fn grouped_kfold_stratified(patients: &[(String, bool)], k: usize, m: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    let labels: BTreeMap<&String, bool> = patients.iter().map(|(p, l)| (p, *l)).collect();
    check(labels.len(), k, m)?;
    let strata = [false, true]
        .iter()
        .map(|&c| labels.iter().filter(|(_, &l)| l == c).map(|(p, _)| (*p).clone()).collect())
        .collect();
    Ok(build(strata, k, m, seed, true))
}

impl FoldPlan {
    /// Rows whose patient is in outer fold `fold`.
    pub fn outer_test_rows(&self, groups: &[String], fold: usize) -> Vec<usize> {
        (0..groups.len()).filter(|&i| self.outer.get(&groups[i]) == Some(&fold)).collect()
    }

    pub fn outer_train_rows(&self, groups: &[String], fold: usize) -> Vec<usize> {
        (0..groups.len())
            .filter(|&i| self.outer.get(&groups[i]).is_some_and(|&f| f != fold))
            .collect()
    }

    /// `(train, validation)` row indices of inner fold `inner` within outer
    /// fold `fold`, both subsets of the outer-train rows.
    pub fn inner_split(&self, groups: &[String], fold: usize, inner: usize) -> (Vec<usize>, Vec<usize>) {
        let assign = &self.inner[fold];
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            match assign.get(g) {
                Some(&j) if j == inner => val.push(i),
                Some(_) => train.push(i),
                None => {}
            }
        }
        (train, val)
    }

    /// Every inner `(train, validation)` split of outer fold `fold`.
    pub fn inner_splits(&self, groups: &[String], fold: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..self.m).map(|j| self.inner_split(groups, fold, j)).collect()
    }
}
