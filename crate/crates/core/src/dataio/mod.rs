//! Volume ingestion, preprocessing, the phantom cohort, and stratified folds.
//!
//! On-disk formats:
//!
//! - volume: `<name>.vol` (raw little-endian `f32`, `z`-major) plus a
//!   `<name>.json` sidecar `{"side": .., "version": 1}`
//! - region table: CSV `subject_id,<region_1>,...`
//! - dataset manifest: JSON listing subjects, labels, volume paths and the
//!   optional region-table path, all relative to the manifest

mod dataset;
mod folds;
mod phantom;
mod volume;

pub use dataset::{LabeledDataset, Label, RegionTable, Subject, REGION_NAMES};
pub use folds::{split_kfold, Fold, KFold};
pub use phantom::{generate_phantoms, PhantomConfig};
pub use volume::{load_volume, preprocess, save_volume, Volume, VOLUME_FORMAT_VERSION};
