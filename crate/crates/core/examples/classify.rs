//! Random-forest K-fold accuracy on salient-condition and shared-condition
//! features of a freshly trained CVAE.
//!
//! cargo run --release --example classify

use contrast3d::classifier::{kfold_accuracy, ForestConfig};
use contrast3d::cvae::{train, CvaeConfig, FeatureMode};
use contrast3d::dataio::{generate_phantoms, PhantomConfig};
use contrast3d::pipeline::{condition_features, Condition};

fn main() -> contrast3d::Result<()> {
    let data = generate_phantoms(&PhantomConfig {
        side: 16,
        ..PhantomConfig::default()
    })?;
    let config = CvaeConfig {
        max_iterations: 600,
        ..CvaeConfig::desk(16)
    };
    let model = train(&config, &data, 1)?.model;
    let forest = ForestConfig::default();
    for condition in [Condition::Salient, Condition::Shared] {
        let m = condition_features(&model, &data, condition, FeatureMode::Mean, 0)?;
        for k in [3, 5, 10] {
            let r = kfold_accuracy(m.values.view(), &m.label_indices(), k, 11, &forest)?;
            println!("{:<8} k={k:<2} accuracy {:.3} +/- {:.3}", condition.name(), r.mean, r.std);
        }
    }
    Ok(())
}
