use serde::{Deserialize, Serialize};

use super::CognateDataset;
use crate::detector::Label;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Stratified partition of dataset indices into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// `(train, test)` indices with fold `i` held out.
    pub fn split(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        (train, self.folds[i].clone())
    }

    pub fn len(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn stratified_kfold(dataset: &CognateDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratify(&dataset.labels()?, k, seed)
}

/// Deals each class's shuffled members round-robin over the folds. Each
/// class starts where the previous one stopped, so fold sizes stay
/// balanced as well as per-class counts.
pub fn stratify(labels: &[Label], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = Rng::new(seed);
    let mut folds = vec![Vec::new(); k];
    let mut offset = 0;
    for class in [Label::NonCognate, Label::Cognate] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::Precondition(format!(
                "class {class} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for (m, idx) in members.iter().enumerate() {
            folds[(offset + m) % k].push(*idx);
        }
        offset = (offset + members.len()) % k;
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}
