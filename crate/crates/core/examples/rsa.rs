//! Representational similarity between latent features and per-region
//! scalars; the planted region should come out salient.
//!
//! cargo run --release --example rsa -- [out_dir]

use contrast3d::cvae::{train, CvaeConfig};
use contrast3d::dataio::{generate_phantoms, PhantomConfig, REGION_NAMES};
use contrast3d::rsa::{rsa_report, write_rsa_csv, write_rsa_svg, RsaConfig};

fn main() -> contrast3d::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example_out/rsa".into()));
    std::fs::create_dir_all(&out)?;
    let phantom = PhantomConfig {
        side: 16,
        ..PhantomConfig::default()
    };
    let data = generate_phantoms(&phantom)?;
    let model = train(&CvaeConfig::desk(16), &data, 3)?.model;
    let report = rsa_report(
        &model,
        &data,
        &RsaConfig {
            permutations: 1000,
            ..RsaConfig::default()
        },
    )?;
    print!("{}", report.summary);
    let planted: Vec<&str> = phantom.salient_region_indices.iter().map(|&i| REGION_NAMES[i]).collect();
    println!("planted {:?}, salient-flagged {:?}", planted, report.salient_flagged_regions());
    write_rsa_csv(out.join("rsa.csv"), &report)?;
    write_rsa_svg(out.join("rsa.svg"), &report)?;
    Ok(())
}
