//! Trains on a large source cohort, freezes the model and classifies a small
//! target cohort, against retraining on each target subsample.
//!
//! cargo run --release --example transfer -- [out_dir]

use contrast3d::dataio::{generate_phantoms, PhantomConfig};
use contrast3d::pipeline::{run_transfer, ExperimentKind, ExperimentSpec};

fn main() -> contrast3d::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "example_out/transfer".into());
    let cohort = |n: usize, seed: u64| {
        generate_phantoms(&PhantomConfig {
            n_positive: n,
            n_control: n,
            side: 16,
            seed,
            ..PhantomConfig::default()
        })
    };
    let source = cohort(100, 1001)?;
    let target = cohort(10, 2002)?;
    let spec = ExperimentSpec {
        kind: ExperimentKind::Transfer,
        transfer_sizes: vec![10, 20],
        transfer_repeats: 5,
        without_transfer_max_iterations: 150,
        output_dir: out.into(),
        ..ExperimentSpec::default()
    };
    let report = run_transfer(&spec, &source, &target)?;
    for curve in &report.curves {
        for p in &curve.points {
            println!("{:<17} size {:>2}: {:.3} +/- {:.3}", curve.arm, p.size, p.mean, p.std);
        }
    }
    let t = &report.training[0];
    println!(
        "source model frozen: {}",
        t.checksum_after_use.as_deref() == Some(t.params_checksum.as_str())
    );
    Ok(())
}
