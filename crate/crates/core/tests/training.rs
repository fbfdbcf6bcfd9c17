//! Training on a 16^3 phantom cohort of 40 subjects.

use contrast3d::cvae::{train, CvaeConfig};
use contrast3d::dataio::{generate_phantoms, PhantomConfig};

fn cohort() -> contrast3d::dataio::LabeledDataset {
    generate_phantoms(&PhantomConfig {
        n_positive: 20,
        n_control: 20,
        side: 16,
        seed: 40,
        ..PhantomConfig::default()
    })
    .unwrap()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

#[test]
fn recon_mse_drops_tenfold_with_a_non_increasing_trend() {
    let config = CvaeConfig {
        max_iterations: 600,
        ..CvaeConfig::desk(16)
    };
    let out = train(&config, &cohort(), 5).unwrap();
    let mse: Vec<f64> = out.trace.iter().map(|r| r.recon_mse).collect();
    let first = mse[0];
    let last = *mse.last().unwrap();
    assert!(last * 10.0 <= first, "start {first}, end {last}");

    let medians: Vec<f64> = mse.chunks(50).take(10).map(|w| median(&mut w.to_vec())).collect();
    assert_eq!(medians.len(), 10);
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "window medians rose: {medians:?}");
    }
}
