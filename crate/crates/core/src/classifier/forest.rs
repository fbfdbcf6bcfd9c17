use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
    /// Grow trees on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            seed: 0,
            parallel: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Training votes per class that reached this leaf.
        counts: Vec<usize>,
        class: usize,
    },
}

/// One CART tree; node 0 is the root. Samples with `x[feature] <= threshold`
/// go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { class, .. } => return *class,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub n_classes: usize,
    pub config: ForestConfig,
}

/// Index of the largest count; ties go to the lower index.
pub(crate) fn argmax_low(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    mtry: usize,
    config: &'a ForestConfig,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(&mut self, counts: Vec<usize>) -> usize {
        let class = argmax_low(&counts);
        self.nodes.push(TreeNode::Leaf { counts, class });
        self.nodes.len() - 1
    }

    fn best_split_on(&self, samples: &[usize], feature: usize, parent: &[usize]) -> Option<BestSplit> {
        let col = &self.columns[feature];
        let mut order: Vec<usize> = samples.to_vec();
        order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        let n = order.len();
        let mut left = vec![0usize; self.n_classes];
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            left[self.labels[order[i]]] += 1;
            let (a, b) = (col[order[i]], col[order[i + 1]]);
            if a == b {
                continue;
            }
            let nl = i + 1;
            let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
            if best.as_ref().map_or(true, |b| score < b.score) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit {
                    score,
                    feature,
                    threshold,
                });
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut rng::Rng) -> usize {
        let mut counts = vec![0usize; self.n_classes];
        for &s in &samples {
            counts[self.labels[s]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || samples.len() < self.config.min_samples_split {
            return self.leaf(counts);
        }
        // Candidate features in random order; the first `mtry` are scored, and
        // further ones only if none of those can split (all values tied).
        let d = self.columns.len();
        let order = sample(rng, d, d).into_vec();
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.best_split_on(&samples, f, &counts) {
                if best.as_ref().map_or(true, |b| c.score < b.score) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else {
            return self.leaf(counts);
        };
        let col = &self.columns[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&s| col[s] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            counts: Vec::new(),
            class: 0,
        });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn check_features(features: ArrayView2<'_, f64>) -> Result<()> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("features contain non-finite values".into()));
    }
    Ok(())
}

/// Random forest with Gini splits, bootstrap resampling and
/// `ceil(sqrt(d))` candidate features per split.
pub fn train_forest(features: ArrayView2<'_, f64>, labels: &[usize], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    let (n, d) = features.dim();
    if labels.len() != n {
        return Err(Error::shape("train_forest", format!("{n} rows but {} labels", labels.len())));
    }
    if n < 2 || d == 0 {
        return Err(Error::Input("train_forest needs at least 2 samples and 1 feature".into()));
    }
    check_features(features)?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let present = (0..n_classes).filter(|c| labels.contains(c)).count();
    if present < 2 {
        return Err(Error::Input("train_forest needs at least two classes".into()));
    }
    let columns: Vec<Vec<f64>> = (0..d).map(|j| features.column(j).to_vec()).collect();
    let mtry = (d as f64).sqrt().ceil() as usize;
    let grow_tree = |t: usize| -> DecisionTree {
        let mut rng = rng::derive(config.seed, t as u64);
        let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut g = Grower {
            columns: &columns,
            labels,
            n_classes,
            mtry,
            config,
            nodes: Vec::new(),
        };
        g.grow(boot, 0, &mut rng);
        DecisionTree { nodes: g.nodes }
    };
    let trees = if config.parallel {
        (0..config.n_trees).into_par_iter().map(grow_tree).collect()
    } else {
        (0..config.n_trees).map(grow_tree).collect()
    };
    Ok(ForestModel {
        trees,
        n_features: d,
        n_classes,
        config: config.clone(),
    })
}

impl ForestModel {
    /// Per-row class vote counts.
    pub fn votes(&self, features: ArrayView2<'_, f64>) -> Result<Array2<usize>> {
        if features.ncols() != self.n_features {
            return Err(Error::shape(
                "predict",
                format!("model has {} features, input has {}", self.n_features, features.ncols()),
            ));
        }
        let mut votes = Array2::zeros((features.nrows(), self.n_classes));
        for (i, row) in features.outer_iter().enumerate() {
            let row = row.to_vec();
            for t in &self.trees {
                votes[[i, t.predict_row(&row)]] += 1;
            }
        }
        Ok(votes)
    }

    /// Majority vote over trees, ties to the lower class index.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let votes = self.votes(features)?;
        Ok(votes
            .outer_iter()
            .map(|r| argmax_low(r.as_slice().expect("standard layout")))
            .collect())
    }
}

/// Fraction of positions where `a` and `b` agree.
pub fn accuracy(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return f64::NAN;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
