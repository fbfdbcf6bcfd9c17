//! The contrastive VAE.
//!
//! Positive subjects pass through both the salient and the background
//! encoder and are reconstructed from `concat(z, s)`. Control subjects pass
//! through the background encoder only and are reconstructed from
//! `concat(z, 0)`, which pushes everything the cohorts share into `z` and
//! leaves `s` for what is specific to positives.
//!
//! Training runs in `f32`; [`CvaeModel::cast`] gives an `f64` copy for
//! gradient checks.

mod checkpoint;
mod config;
mod features;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, params_checksum, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{CvaeConfig, Encoder, DIRECT_STOP_THRESHOLD, TRANSFER_STOP_THRESHOLD};
pub use features::{
    extract_features, features_from_posteriors, posteriors, FeatureMatrix, FeatureMode,
    LatentGaussian,
};
#[cfg(test)]
pub(crate) use features::subject_noise;
pub use model::{BackgroundPass, BothPass, CvaeModel, ParamEntry, ParamSet, TrainingMeta};
pub use train::{cvae_batch_loss, train, BatchLoss, BatchNoise, IterationRecord, TrainOutcome};

#[cfg(test)]
mod tests;
