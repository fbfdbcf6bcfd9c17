use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// One train/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KFold {
    pub folds: Vec<Fold>,
    pub warnings: Vec<String>,
}

/// Stratified K-fold partition of `0..n`.
///
/// Each class is shuffled with its own stream of `seed` and dealt round-robin
/// over the folds, continuing where the previous class stopped, so every fold
/// holds `floor` or `ceil` of `class_count / k` members of each class and fold
/// sizes differ by at most one.
pub fn split_kfold(n: usize, k: usize, labels: &[usize], seed: u64) -> Result<KFold> {
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} samples", labels.len())));
    }
    if k < 2 || k > n {
        return Err(Error::Input(format!("k must satisfy 2 <= k <= n (k = {k}, n = {n})")));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut warnings = Vec::new();
    let mut tests: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            warnings.push(format!(
                "class {class} has {} members, fewer than k = {k}; some folds lack it",
                members.len()
            ));
        }
        members.shuffle(&mut rng::derive(seed, class as u64));
        for m in members {
            tests[cursor % k].push(m);
            cursor += 1;
        }
    }
    let folds = tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            for &t in &test {
                in_test[t] = true;
            }
            let train = (0..n).filter(|&i| !in_test[i]).collect();
            Fold { train, test }
        })
        .collect();
    Ok(KFold { folds, warnings })
}
