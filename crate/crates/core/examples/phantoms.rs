//! Generates a small phantom cohort, saves it, reloads it and prints the
//! per-class mean intensity inside the planted dip.
//!
//! cargo run --release --example phantoms -- [out_dir]

use contrast3d::dataio::{generate_phantoms, Label, LabeledDataset, PhantomConfig};

fn main() -> contrast3d::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "example_out/phantoms".into());
    let config = PhantomConfig {
        side: 16,
        ..PhantomConfig::default()
    };
    let data = generate_phantoms(&config)?;
    let manifest = data.save(&out)?;
    let back = LabeledDataset::load(&manifest)?;
    println!(
        "{} subjects ({} positive, {} control) at {}^3 -> {}",
        back.len(),
        back.count(Label::Positive),
        back.count(Label::Control),
        config.side,
        manifest.display()
    );
    for label in [Label::Positive, Label::Control] {
        let idx = back.indices_of(label);
        let mean: f64 = idx
            .iter()
            .map(|&i| {
                let v = back.subjects()[i].volume.voxels();
                v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
            })
            .sum::<f64>()
            / idx.len() as f64;
        println!("{label}: mean voxel intensity {mean:.4}");
    }
    if let Some(table) = back.region_table() {
        println!("region table: {} regions", table.n_regions());
    }
    Ok(())
}
