//! Contrastive variational autoencoders for volumetric cohorts.
//!
//! A two-encoder/one-decoder VAE factors each subject's volume into
//! *salient* features (encoded only for the positive cohort) and
//! *background* features (shared by both cohorts). The crate then evaluates
//! those features with a random forest under stratified K-fold protocols,
//! runs a cross-cohort transfer workflow, and relates feature geometry to
//! per-region scalar measurements through representational similarity
//! analysis. A deterministic phantom cohort generator makes every stage
//! testable on a desktop.
//!
//! Module map:
//!
//! - [`volgrid`]: reverse-mode autodiff with 3-D (transposed) convolutions and Adam
//! - [`cvae`]: the contrastive VAE, its loss, training loop and checkpoints
//! - [`dataio`]: volume files, preprocessing, phantoms, stratified folds
//! - [`classifier`]: random forest and the cross-validation harness
//! - [`rsa`]: dissimilarity matrices, Kendall tau-b, permutation tests
//! - [`embed2d`]: exact t-SNE and scatter outputs
//! - [`pipeline`]: end-to-end experiments and their reports
//! - [`cli`]: the command-line front end

pub mod classifier;
pub mod cli;
pub mod cvae;
pub mod dataio;
pub mod embed2d;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod rsa;
pub mod volgrid;

pub use error::{Error, Result};
