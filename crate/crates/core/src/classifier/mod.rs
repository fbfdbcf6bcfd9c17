//! Random forest and the cross-validation harness around it.
//!
//! Class indices are the label indices of [`crate::dataio::Label`]
//! (`Control = 0`, `Positive = 1`); any dense `0..c` labelling works.

mod cv;
mod forest;

pub use cv::{
    kfold_accuracy, mean_std, sample_size_curve, write_cv_csv, write_curve_csv, CurvePoint,
    CvReport,
};
pub(crate) use cv::RepeatPlan;
pub use forest::{accuracy, train_forest, DecisionTree, ForestConfig, ForestModel, TreeNode};

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use rand::seq::SliceRandom;
    use rand::Rng;

    use super::*;
    use crate::rng;

    fn separable_1d(n: usize) -> (Array2<f64>, Vec<usize>) {
        // A wide gap between the classes so out-of-fold points never land
        // between a training pair.
        let y: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 + 1000.0 * y[i] as f64);
        (x, y)
    }

    #[test]
    fn separable_training_points_recovered() {
        let (x, y) = separable_1d(20);
        let f = train_forest(x.view(), &y, &ForestConfig::default()).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), y);
        assert_eq!(f.trees.len(), 100);
    }

    #[test]
    fn xor_is_fit() {
        let mut r = rng::seeded(3);
        let corners = [([0.0, 0.0], 0), ([1.0, 1.0], 0), ([0.0, 1.0], 1), ([1.0, 0.0], 1)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..25 {
            for (p, l) in corners {
                rows.push(p[0] + r.gen_range(-0.01..0.01));
                rows.push(p[1] + r.gen_range(-0.01..0.01));
                y.push(l);
            }
        }
        let x = Array2::from_shape_vec((100, 2), rows).unwrap();
        let f = train_forest(x.view(), &y, &ForestConfig::default()).unwrap();
        assert!(accuracy(&f.predict(x.view()).unwrap(), &y) >= 0.99);
    }

    #[test]
    fn same_seed_same_forest_and_parallel_matches_serial() {
        let mut r = rng::seeded(1);
        let x = Array2::from_shape_fn((40, 5), |_| r.gen_range(0.0..1.0));
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let cfg = ForestConfig {
            n_trees: 15,
            seed: 9,
            ..ForestConfig::default()
        };
        let a = train_forest(x.view(), &y, &cfg).unwrap();
        let b = train_forest(x.view(), &y, &ForestConfig { parallel: false, ..cfg.clone() }).unwrap();
        assert_eq!(a.trees, b.trees);
        let probe = Array2::from_shape_fn((10, 5), |(i, j)| (i * j) as f64 / 40.0);
        assert_eq!(a.predict(probe.view()).unwrap(), b.predict(probe.view()).unwrap());
    }

    #[test]
    fn every_leaf_has_votes() {
        let mut r = rng::seeded(2);
        let x = Array2::from_shape_fn((30, 3), |_| r.gen_range(0.0..1.0));
        let y: Vec<usize> = (0..30).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let f = train_forest(x.view(), &y, &ForestConfig::default()).unwrap();
        for t in &f.trees {
            for n in &t.nodes {
                if let TreeNode::Leaf { counts, .. } = n {
                    assert!(counts.iter().sum::<usize>() >= 1);
                }
            }
        }
    }

    #[test]
    fn single_class_and_bad_dims_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(train_forest(x.view(), &[1, 1], &ForestConfig::default()).is_err());
        let f = train_forest(x.view(), &[0, 1], &ForestConfig::default()).unwrap();
        assert!(f.predict(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn two_tree_tie_goes_to_lower_class() {
        let leaf = |class| DecisionTree {
            nodes: vec![TreeNode::Leaf {
                counts: vec![1, 1],
                class,
            }],
        };
        let f = ForestModel {
            trees: vec![leaf(1), leaf(0)],
            n_features: 1,
            n_classes: 2,
            config: ForestConfig::default(),
        };
        assert_eq!(f.predict(array![[0.0], [0.0]].view()).unwrap(), vec![0, 0]);
    }

    #[test]
    fn monotone_transform_leaves_predictions_unchanged() {
        let mut r = rng::seeded(4);
        let x = Array2::from_shape_fn((40, 3), |_| r.gen_range(-1.0..1.0));
        let y: Vec<usize> = x.outer_iter().map(|row| usize::from(row[0] + row[1] > 0.0)).collect();
        let probe = Array2::from_shape_fn((25, 3), |_| r.gen_range(-1.0..1.0));
        let t = |a: &Array2<f64>| a.mapv(|v| v.powi(3) * 5.0 + 2.0);
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let a = train_forest(x.view(), &y, &cfg).unwrap();
        let b = train_forest(t(&x).view(), &y, &cfg).unwrap();
        // Thresholds are midpoints, so only probes away from them are compared.
        let pa = a.predict(probe.view()).unwrap();
        let pb = b.predict(t(&probe).view()).unwrap();
        let agree = accuracy(&pa, &pb);
        assert!(agree >= 0.9, "{agree}");
        assert_eq!(a.predict(x.view()).unwrap(), b.predict(t(&x).view()).unwrap());
    }

    #[test]
    fn perfectly_separable_cv_is_perfect_for_every_default_k() {
        let (x, y) = separable_1d(78);
        for k in [3, 5, 10, 20] {
            let r = kfold_accuracy(x.view(), &y, k, 1, &ForestConfig::default()).unwrap();
            assert_eq!((r.mean, r.std), (1.0, 0.0));
            assert_eq!(r.per_fold_accuracy.len(), k);
        }
    }

    #[test]
    fn std_is_population_estimator() {
        let mut r = rng::seeded(5);
        let x = Array2::from_shape_fn((30, 2), |_| r.gen_range(0.0..1.0));
        let y: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let rep = kfold_accuracy(x.view(), &y, 5, 2, &ForestConfig::default()).unwrap();
        let m = rep.per_fold_accuracy.iter().sum::<f64>() / 5.0;
        let v = rep.per_fold_accuracy.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 5.0;
        assert!((rep.mean - m).abs() < 1e-15 && (rep.std - v.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let cfg = ForestConfig {
            n_trees: 25,
            ..ForestConfig::default()
        };
        let mut means = Vec::new();
        for seed in 0..20 {
            let mut r = rng::seeded(100 + seed);
            let x = Array2::from_shape_fn((200, 16), |_| r.gen_range(0.0..1.0));
            let mut y: Vec<usize> = (0..200).map(|i| i % 2).collect();
            y.shuffle(&mut r);
            means.push(kfold_accuracy(x.view(), &y, 5, seed, &cfg).unwrap().mean);
        }
        let m = means.iter().sum::<f64>() / 20.0;
        assert!((m - 0.5).abs() <= 0.1, "{m}");
    }

    #[test]
    fn curve_sizes_and_full_size() {
        let (x, y) = separable_1d(30);
        let cfg = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let pts = sample_size_curve(x.view(), &y, &[10, 30], 4, 3, 0, &cfg).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].accuracies.len(), 4);
        assert_eq!(pts[1].mean, 1.0);
        assert!(sample_size_curve(x.view(), &y, &[2], 4, 3, 0, &cfg).is_err());
    }

    #[test]
    fn stratified_subsample_keeps_both_classes() {
        let labels: Vec<usize> = (0..50).map(|i| usize::from(i < 3)).collect();
        for size in 2..=50 {
            let idx = cv::stratified_subsample(&labels, size, &mut rng::seeded(size as u64)).unwrap();
            assert_eq!(idx.len(), size);
            assert!(idx.iter().any(|&i| labels[i] == 1) && idx.iter().any(|&i| labels[i] == 0));
        }
    }
}
