use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::split_kfold;
use crate::error::{Error, Result};
use crate::rng;

use super::forest::{accuracy, train_forest, ForestConfig};

/// Mean and spread of per-fold accuracies. `std` divides by the number of
/// folds (population estimator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub per_fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub std_estimator: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stratified K-fold accuracy of a fresh forest per fold. Fold `i` uses
/// forest seed `mix(config.seed, i)`.
pub fn kfold_accuracy(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
    seed: u64,
    config: &ForestConfig,
) -> Result<CvReport> {
    let n = features.nrows();
    let split = split_kfold(n, k, labels, seed)?;
    let mut per_fold = Vec::with_capacity(k);
    for (i, fold) in split.folds.iter().enumerate() {
        let train_x = features.select(Axis(0), &fold.train);
        let train_y: Vec<usize> = fold.train.iter().map(|&j| labels[j]).collect();
        let test_x = features.select(Axis(0), &fold.test);
        let test_y: Vec<usize> = fold.test.iter().map(|&j| labels[j]).collect();
        let cfg = ForestConfig {
            seed: rng::mix(config.seed, i as u64),
            ..config.clone()
        };
        let forest = train_forest(train_x.view(), &train_y, &cfg)?;
        per_fold.push(accuracy(&forest.predict(test_x.view())?, &test_y));
    }
    let (mean, std) = mean_std(&per_fold);
    Ok(CvReport {
        k,
        per_fold_accuracy: per_fold,
        mean,
        std,
        std_estimator: "population".into(),
        warnings: split.warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
    /// Mean K-fold accuracy of each repeat.
    pub accuracies: Vec<f64>,
}

/// Stratified subsample of `size` indices: each class keeps its share by
/// largest remainder, with at least one member per class.
pub(crate) fn stratified_subsample(labels: &[usize], size: usize, rng: &mut rng::Rng) -> Result<Vec<usize>> {
    let n = labels.len();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<usize>> = (0..n_classes)
        .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    let present: Vec<usize> = (0..n_classes).filter(|&c| !members[c].is_empty()).collect();
    if size < present.len() || size > n {
        return Err(Error::Input(format!("cannot draw {size} of {n} samples with every class present")));
    }
    let mut take = vec![0usize; n_classes];
    let mut rema: Vec<(f64, usize)> = Vec::new();
    for &c in &present {
        let exact = members[c].len() as f64 * size as f64 / n as f64;
        take[c] = (exact.floor() as usize).max(1).min(members[c].len());
        rema.push((exact - exact.floor(), c));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut total: usize = take.iter().sum();
    let mut i = 0;
    while total < size {
        let c = rema[i % rema.len()].1;
        if take[c] < members[c].len() {
            take[c] += 1;
            total += 1;
        }
        i += 1;
    }
    while total > size {
        let c = *present.iter().max_by_key(|&&c| (take[c], std::cmp::Reverse(c))).expect("non-empty");
        take[c] -= 1;
        total -= 1;
    }
    let mut out = Vec::with_capacity(size);
    for &c in &present {
        let mut m = members[c].clone();
        m.shuffle(rng);
        out.extend_from_slice(&m[..take[c]]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Subsample and seeds of repeat `r` at one curve size.
pub(crate) struct RepeatPlan {
    pub indices: Vec<usize>,
    pub fold_seed: u64,
    pub forest: ForestConfig,
}

impl RepeatPlan {
    pub fn new(labels: &[usize], size: usize, r: usize, seed: u64, config: &ForestConfig) -> Result<Self> {
        let mut rng = rng::derive(rng::mix(seed, size as u64), r as u64);
        let key = (size as u64) << 32 | r as u64;
        Ok(Self {
            indices: stratified_subsample(labels, size, &mut rng)?,
            fold_seed: rng::mix(seed ^ 0x5eed, key),
            forest: ForestConfig {
                seed: rng::mix(config.seed, key),
                ..config.clone()
            },
        })
    }
}

/// Accuracy as a function of cohort size: for each size, `repeats`
/// stratified subsamples each scored by `kfold_accuracy`. Repeat `r` of size
/// `s` draws from stream `(mix(seed, s), r)`.
pub fn sample_size_curve(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    sizes: &[usize],
    repeats: usize,
    k: usize,
    seed: u64,
    config: &ForestConfig,
) -> Result<Vec<CurvePoint>> {
    if repeats == 0 {
        return Err(Error::Input("repeats must be >= 1".into()));
    }
    let n = features.nrows();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size < k || size > n {
            return Err(Error::Input(format!("curve size {size} must satisfy k = {k} <= size <= {n}")));
        }
        let mut accuracies = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let plan = RepeatPlan::new(labels, size, r, seed, config)?;
            let x = features.select(Axis(0), &plan.indices);
            let y: Vec<usize> = plan.indices.iter().map(|&i| labels[i]).collect();
            accuracies.push(kfold_accuracy(x.view(), &y, k, plan.fold_seed, &plan.forest)?.mean);
        }
        let (mean, std) = mean_std(&accuracies);
        points.push(CurvePoint {
            size,
            mean,
            std,
            repeats,
            accuracies,
        });
    }
    Ok(points)
}

/// `k,fold,accuracy` rows for each report.
pub fn write_cv_csv(path: impl AsRef<Path>, reports: &[CvReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "fold", "accuracy"])?;
    for r in reports {
        for (i, a) in r.per_fold_accuracy.iter().enumerate() {
            w.write_record([r.k.to_string(), i.to_string(), a.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `size,mean,std` rows.
pub fn write_curve_csv(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["size", "mean", "std"])?;
    for p in points {
        w.write_record([p.size.to_string(), p.mean.to_string(), p.std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
