use ndarray::{array, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::cvae::{CvaeConfig, CvaeModel};
use crate::dataio::{generate_phantoms, PhantomConfig, RegionTable};

fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((n, d), |_| r.sample(StandardNormal))
}

#[test]
fn euclidean_hand_cases() {
    let m = pairwise_euclidean(array![[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]].view(), "t").unwrap();
    assert_eq!(m.values[[0, 1]], 5.0);
    assert_eq!(m.values[[1, 0]], 5.0);
    assert_eq!(m.values[[0, 2]], 0.0);
    assert_eq!(m.lower_triangle(), vec![5.0, 0.0, 5.0]);
    let big = pairwise_euclidean(random_features(42, 16, 1).view(), "t").unwrap();
    assert_eq!(big.values.dim(), (42, 42));
    assert!(pairwise_euclidean(array![[f64::NAN]].view(), "t").is_err());
}

#[test]
fn euclidean_invariant_under_rotation() {
    let x = random_features(10, 2, 3);
    let (c, s) = (0.6f64, 0.8f64);
    let rot = array![[c, -s], [s, c]];
    let a = pairwise_euclidean(x.view(), "a").unwrap();
    let b = pairwise_euclidean(x.dot(&rot).view(), "b").unwrap();
    for (u, v) in a.values.iter().zip(b.values.iter()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn region_matrix_cases() {
    let m = region_dissimilarity(&[1.0, 4.0], "r").unwrap();
    assert_eq!(m.values, array![[0.0, 3.0], [3.0, 0.0]]);
    let c = region_dissimilarity(&[2.0; 5], "r").unwrap();
    assert!(c.values.iter().all(|&v| v == 0.0));
    assert!(region_dissimilarity(&[1.0, f64::INFINITY], "r").is_err());
}

#[test]
fn tri_index_matches_lower_triangle_order() {
    let n = 7;
    let m = DissimilarityMatrix {
        values: Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { (i.max(j) * 10 + i.min(j)) as f64 }),
        source: "t".into(),
    };
    let tri = m.lower_triangle();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                assert_eq!(tri[matrix::tri_index(i, j)], m.values[[i, j]]);
            }
        }
    }
}

#[test]
fn self_correlation_hits_permutation_floor() {
    let m = pairwise_euclidean(random_features(15, 3, 4).view(), "x").unwrap();
    let r = rsa_correlate(&[m.clone()], &m, 199, 1).unwrap();
    assert!((r.mean_tau.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.p_value.unwrap(), 1.0 / 200.0);
    assert!(rsa_correlate(&[m.clone()], &m, 0, 1).is_err());
}

#[test]
fn constant_region_is_undefined() {
    let m = pairwise_euclidean(random_features(8, 3, 5).view(), "x").unwrap();
    let c = region_dissimilarity(&[1.0; 8], "c").unwrap();
    let r = rsa_correlate(&[m], &c, 10, 0).unwrap();
    assert_eq!((r.mean_tau, r.p_value), (None, None));
    assert!(!r.warnings.is_empty());
}

#[test]
fn p_value_is_stable_under_subject_reordering() {
    let n = 20;
    let x = random_features(n, 4, 6);
    let mut r = rng::seeded(7);
    let region: Vec<f64> = (0..n).map(|i| x[[i, 0]] + 0.8 * r.sample::<f64, _>(StandardNormal)).collect();
    let lat = pairwise_euclidean(x.view(), "x").unwrap();
    let reg = region_dissimilarity(&region, "r").unwrap();
    let a = rsa_correlate(&[lat], &reg, 2000, 3).unwrap();
    let order: Vec<usize> = (0..n).rev().collect();
    let x2 = x.select(ndarray::Axis(0), &order);
    let region2: Vec<f64> = order.iter().map(|&i| region[i]).collect();
    let b = rsa_correlate(
        &[pairwise_euclidean(x2.view(), "x").unwrap()],
        &region_dissimilarity(&region2, "r").unwrap(),
        2000,
        3,
    )
    .unwrap();
    assert!((a.mean_tau.unwrap() - b.mean_tau.unwrap()).abs() < 1e-12);
    // Different relabellings of the same null: equal up to Monte Carlo error.
    let (pa, pb) = (a.p_value.unwrap(), b.p_value.unwrap());
    let se = (pa.max(1e-3) * (1.0 - pa) / 2000.0).sqrt();
    assert!((pa - pb).abs() <= 4.0 * se + 1e-3, "{pa} vs {pb}");
}

#[test]
fn tiers() {
    assert_eq!(significance_tier(5e-5), "***");
    assert_eq!(significance_tier(5e-4), "**");
    assert_eq!(significance_tier(0.01), "*");
    assert_eq!(significance_tier(0.05), "n.s.");
}

#[test]
fn report_flags_require_both_channels() {
    let n = 12;
    let x = random_features(n, 2, 8);
    let sal = vec![pairwise_euclidean(x.view(), "s").unwrap()];
    let bg = vec![pairwise_euclidean(random_features(n, 2, 9).view(), "b").unwrap()];
    let tracked: Vec<f64> = (0..n).map(|i| x[[i, 0]] * 10.0).collect();
    let noise: Vec<f64> = random_features(n, 1, 10).column(0).to_vec();
    let table = RegionTable {
        names: vec!["tracked".into(), "noise".into()],
        rows: (0..n).map(|i| vec![tracked[i], noise[i]]).collect(),
    };
    let cfg = RsaConfig {
        permutations: 300,
        ..RsaConfig::default()
    };
    let rep = rsa_from_matrices(&sal, &bg, &table, &cfg).unwrap();
    assert_eq!(rep.results.len(), 2);
    assert!(rep.results[0].salient.mean_tau.unwrap() > 0.0);
    for r in &rep.results {
        assert_eq!(r.flagged, r.salient_flagged && r.background.significant_negative(0.05));
    }
    assert!(rep.summary.contains("tracked"));
}

fn tiny_model(seed: u64) -> (CvaeModel<f32>, crate::dataio::LabeledDataset) {
    let cfg = CvaeConfig {
        conv_filters: [2, 2],
        fc_hidden: 4,
        decoder_hidden: 4,
        decoder_channels: 2,
        deconv_filters: [2, 2, 1],
        latent_dim: 3,
        ..CvaeConfig::desk(8)
    };
    let ds = generate_phantoms(&PhantomConfig {
        n_positive: 6,
        n_control: 3,
        side: 8,
        ..PhantomConfig::default()
    })
    .unwrap();
    (CvaeModel::init(&cfg, seed).unwrap(), ds)
}

#[test]
fn latent_samples_are_seeded() {
    let (m, ds) = tiny_model(1);
    let a = latent_dissimilarity_samples(&m, &ds, crate::cvae::Encoder::Salient, 10, 4).unwrap();
    let b = latent_dissimilarity_samples(&m, &ds, crate::cvae::Encoder::Salient, 10, 4).unwrap();
    assert_eq!(a.len(), 10);
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}

fn max_spread(ms: &[DissimilarityMatrix]) -> f64 {
    let n = ms[0].n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let vals: Vec<f64> = ms.iter().map(|m| m.values[[i, j]]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(hi - lo);
        }
    }
    worst
}

/// Pushes the salient log-variance head far negative so the clamp decides
/// the posterior width.
fn collapse_variance(m: &mut CvaeModel<f32>) {
    for v in m.params_mut().get_mut("salient.logvar.weight").unwrap() {
        *v = 0.0;
    }
    for v in m.params_mut().get_mut("salient.logvar.bias").unwrap() {
        *v = -1000.0;
    }
}

#[test]
fn collapsed_variance_gives_near_identical_matrices() {
    let (mut m, ds) = tiny_model(2);
    collapse_variance(&mut m);
    let ms = latent_dissimilarity_samples(&m, &ds, crate::cvae::Encoder::Salient, 10, 3).unwrap();
    // |d_s - d_mu| <= sigma * |eps_i - eps_j| by the triangle inequality, so
    // the spread across draws is at most 2 * sigma * max |eps_i - eps_j|.
    let sigma = (-0.5 * m.config().logvar_clamp).exp();
    let n = ds.len();
    let mut eps_gap = 0.0f64;
    for s in 0..10 {
        let e: Vec<Vec<f64>> = (0..n).map(|i| crate::cvae::subject_noise(3, s, i, 3)).collect();
        for i in 0..n {
            for j in 0..n {
                let g: f64 = e[i].iter().zip(&e[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                eps_gap = eps_gap.max(g);
            }
        }
    }
    let spread = max_spread(&ms);
    assert!(spread <= 2.0 * sigma * eps_gap + 1e-5, "{spread} vs bound {}", 2.0 * sigma * eps_gap);
    // A wider clamp lets the variance collapse further.
    let cfg = CvaeConfig {
        logvar_clamp: 20.0,
        ..m.config().clone()
    };
    let wide = CvaeModel::from_parts(cfg, m.params().clone(), None).unwrap();
    let ms = latent_dissimilarity_samples(&wide, &ds, crate::cvae::Encoder::Salient, 10, 3).unwrap();
    assert!(max_spread(&ms) < 1e-2);
}
