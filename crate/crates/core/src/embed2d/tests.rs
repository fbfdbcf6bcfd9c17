use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;

fn two_clusters(per: usize, gap: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let x = Array2::from_shape_fn((2 * per, 16), |(i, k)| {
        let centre = if i >= per && k == 0 { gap } else { 0.0 };
        centre + r.sample::<f64, _>(StandardNormal)
    });
    let g = (0..2 * per).map(|i| usize::from(i >= per)).collect();
    (x, g)
}

fn perplexity_of(row: ndarray::ArrayView1<f64>) -> f64 {
    let h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.exp()
}

#[test]
fn separated_clusters_stay_separated() {
    let (x, g) = two_clusters(20, 10.0, 1);
    for seed in 0..5 {
        let res = tsne_embed(x.view(), &TsneConfig { seed, ..TsneConfig::default() }).unwrap();
        let s = silhouette(res.embedding.view(), &g).unwrap();
        assert!(s > 0.2, "seed {seed}: silhouette {s}");
    }
}

#[test]
fn duplicates_land_close() {
    let (mut x, _) = two_clusters(15, 4.0, 2);
    let dup = x.row(3).to_owned();
    x.row_mut(17).assign(&dup);
    let y = tsne_embed(x.view(), &TsneConfig::default()).unwrap().embedding;
    let n = y.nrows();
    let mut d = Vec::new();
    for i in 0..n {
        for j in 0..i {
            d.push(((y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2)).sqrt());
        }
    }
    let pair = ((y[[3, 0]] - y[[17, 0]]).powi(2) + (y[[3, 1]] - y[[17, 1]]).powi(2)).sqrt();
    d.sort_by(f64::total_cmp);
    assert!(pair < d[d.len() / 10], "{pair} vs p10 {}", d[d.len() / 10]);
}

#[test]
fn objective_falls_after_exaggeration() {
    let (x, _) = two_clusters(20, 6.0, 3);
    let cfg = TsneConfig::default();
    let res = tsne_embed(x.view(), &cfg).unwrap();
    assert_eq!(res.kl_trace.len(), cfg.iterations);
    let at_end_of_exaggeration = res.kl_trace[cfg.exaggeration_iterations - 1];
    assert!(*res.kl_trace.last().unwrap() <= at_end_of_exaggeration);
}

#[test]
fn runs_are_deterministic() {
    let (x, _) = two_clusters(8, 5.0, 4);
    let cfg = TsneConfig { iterations: 300, ..TsneConfig::default() };
    assert_eq!(tsne_embed(x.view(), &cfg).unwrap(), tsne_embed(x.view(), &cfg).unwrap());
    let rnd = TsneConfig { init: TsneInit::Random, ..cfg };
    assert_eq!(tsne_embed(x.view(), &rnd).unwrap(), tsne_embed(x.view(), &rnd).unwrap());
}

#[test]
fn rejects_bad_inputs() {
    let x = Array2::<f64>::zeros((3, 2));
    assert!(tsne_embed(x.view(), &TsneConfig::default()).is_err());
    let (x, _) = two_clusters(5, 1.0, 5);
    for perp in [1.0, 10.0, 0.5] {
        let err = tsne_embed(x.view(), &TsneConfig { perplexity: Some(perp), ..TsneConfig::default() }).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
    let mut bad = x.clone();
    bad[[0, 0]] = f64::NAN;
    assert!(tsne_embed(bad.view(), &TsneConfig::default()).is_err());
    // Perplexity above n - 1 is unreachable; the error names the row.
    let err = conditional_affinities(x.view(), 9.5).unwrap_err();
    assert!(err.to_string().contains("row 0"), "{err}");
}

#[test]
fn default_perplexity() {
    let c = TsneConfig::default();
    assert_eq!(c.resolved_perplexity(40), 13.0);
    assert_eq!(c.resolved_perplexity(200), 30.0);
}

#[test]
fn silhouette_hand_case() {
    // Groups {0, 1} and {10, 11} on a line.
    let x = array![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
    let s = silhouette(x.view(), &[0, 0, 1, 1]).unwrap();
    let expected = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
    assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    assert!(silhouette(x.view(), &[0, 0, 0, 0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affinities_are_a_symmetric_distribution(n in 5usize..60, d in 1usize..6, seed in 0u64..1000) {
        let mut r = rng::seeded(seed);
        let x = Array2::from_shape_fn((n, d), |_| 3.0 * r.sample::<f64, _>(StandardNormal));
        let perp = TsneConfig::default().resolved_perplexity(n).max(1.5);
        let c = conditional_affinities(x.view(), perp).unwrap();
        for i in 0..n {
            prop_assert!((perplexity_of(c.row(i)) - perp).abs() <= 1e-5);
        }
        let p = joint_affinities(x.view(), perp).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-10);
        for i in 0..n {
            for j in 0..n {
                prop_assert!(p[[i, j]] >= 0.0);
                prop_assert!((p[[i, j]] - p[[j, i]]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn csv_round_trip_and_svg_markers() {
    let dir = tempfile::tempdir().unwrap();
    let pts: Vec<EmbeddedPoint> = (0..4)
        .map(|i| EmbeddedPoint {
            id: format!("s{i}"),
            x: 0.1 + i as f64 / 3.0,
            y: -1.0 / (i as f64 + 7.0),
            label: if i < 2 { "positive" } else { "control" }.into(),
            channel: "salient".into(),
        })
        .collect();
    let csv = dir.path().join("e.csv");
    write_embedding_csv(&csv, &pts).unwrap();
    assert_eq!(read_embedding_csv(&csv).unwrap(), pts);
    let svg = dir.path().join("e.svg");
    write_embedding_svg(&svg, &pts).unwrap();
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches(r#"class="marker "#).count(), 4);
    let styles: std::collections::BTreeSet<&str> = text
        .match_indices(r#"class="marker g"#)
        .map(|(i, m)| &text[i + m.len()..i + m.len() + 1])
        .collect();
    assert_eq!(styles.len(), 2);

    write_embedding_csv(&csv, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "id,x,y,label,channel\n");
    assert!(read_embedding_csv(&csv).unwrap().is_empty());
    write_embedding_svg(&svg, &[]).unwrap();
    let empty = std::fs::read_to_string(&svg).unwrap();
    assert!(empty.starts_with("<svg") && empty.trim_end().ends_with("</svg>"));
    assert_eq!(empty.matches("marker").count(), 0);
}
