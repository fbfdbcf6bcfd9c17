//! Every experiment end to end on a reduced 16^3 configuration: direct,
//! raw-voxel ablation, sample-size curve, transfer and RSA.
//!
//! cargo run --release --example pipeline -- [out_dir]

use contrast3d::cvae::CvaeConfig;
use contrast3d::pipeline::{run_pipeline, ExperimentSpec, PipelineConfig};
use contrast3d::rsa::RsaConfig;
use contrast3d::dataio::PhantomConfig;

fn main() -> contrast3d::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "example_out/pipeline".into());
    let config = PipelineConfig {
        source: PhantomConfig {
            n_positive: 60,
            n_control: 60,
            side: 16,
            seed: 1001,
            ..PhantomConfig::default()
        },
        experiment: ExperimentSpec {
            cvae: CvaeConfig {
                max_iterations: 600,
                ..CvaeConfig::desk(16)
            },
            curve_repeats: 20,
            transfer_repeats: 4,
            without_transfer_max_iterations: 100,
            ..ExperimentSpec::default()
        },
        rsa: RsaConfig {
            permutations: 500,
            ..RsaConfig::default()
        },
        output_dir: out.clone().into(),
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&config)?;
    for c in report.direct.conditions.iter().chain(&report.ablation.conditions) {
        let means: Vec<String> = c.cv.iter().map(|r| format!("k{}={:.3}", r.k, r.mean)).collect();
        println!("{:<8} {}", c.name, means.join(" "));
    }
    println!("outputs under {out}");
    Ok(())
}
