//! Trains a desk-width CVAE on 16^3 phantoms, checkpoints it and prints the
//! reconstruction trace.
//!
//! cargo run --release --example train_cvae -- [out_dir]

use contrast3d::cvae::{load_checkpoint, params_checksum, save_checkpoint, train, CvaeConfig};
use contrast3d::dataio::{generate_phantoms, PhantomConfig};

fn main() -> contrast3d::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "example_out/train_cvae".into());
    std::fs::create_dir_all(&out)?;
    let data = generate_phantoms(&PhantomConfig {
        side: 16,
        ..PhantomConfig::default()
    })?;
    let config = CvaeConfig {
        max_iterations: 400,
        ..CvaeConfig::desk(16)
    };
    let outcome = train(&config, &data, 7)?;
    for rec in outcome.trace.iter().step_by(50) {
        println!("iter {:>4}  loss {:.5}  recon mse {:.5}", rec.iteration, rec.loss, rec.recon_mse);
    }
    let last = outcome.trace.last().expect("at least one iteration");
    println!("stopped after {} iterations (converged: {})", last.iteration, outcome.converged);

    let path = std::path::Path::new(&out).join("model.json");
    save_checkpoint(&outcome.model, &path)?;
    let back = load_checkpoint(&path)?;
    println!(
        "checkpoint {} round-trips: {}",
        path.display(),
        params_checksum(&back) == params_checksum(&outcome.model)
    );
    Ok(())
}
