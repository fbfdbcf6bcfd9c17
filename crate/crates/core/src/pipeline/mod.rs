//! End-to-end experiments.
//!
//! Four experiment kinds share one [`ExperimentSpec`]:
//!
//! - `direct`: train on one cohort, classify salient-condition and
//!   shared-condition features for each K, embed both with t-SNE
//! - `ablation_raw`: the same forest protocol on flattened voxels
//! - `sample_curve`: accuracy against cohort size on salient-condition features
//! - `transfer`: train on a source cohort, freeze, classify a small target
//!   cohort, optionally against a retrain-per-subsample arm
//!
//! Salient-condition features take the salient encoder for positives and the
//! background encoder for controls; shared-condition features take the
//! background encoder for everyone. Every seed is derived from
//! `ExperimentSpec::seed`, so a report is a pure function of the spec and the
//! data. Output files are written under `output_dir` and named in the report
//! relative to it.

mod experiments;
mod full;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{CurvePoint, CvReport, ForestConfig};
use crate::cvae::{CvaeConfig, FeatureMode, TRANSFER_STOP_THRESHOLD};
use crate::dataio::LabeledDataset;
use crate::embed2d::TsneConfig;
use crate::error::{Error, Result};

pub use experiments::{
    condition_features, raw_features, run_ablation_raw, run_direct, run_sample_curve, run_transfer, Condition,
};
pub use full::{run_pipeline, PipelineConfig, PipelineReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Direct,
    AblationRaw,
    Transfer,
    SampleCurve,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "ablation_raw" => Ok(Self::AblationRaw),
            "transfer" => Ok(Self::Transfer),
            "sample_curve" => Ok(Self::SampleCurve),
            other => Err(Error::Input(format!("unknown experiment kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Dataset manifest for every kind except `transfer`.
    pub dataset: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub cvae: CvaeConfig,
    pub forest: ForestConfig,
    pub k_values: Vec<usize>,
    pub feature_mode: FeatureMode,
    /// Side the volumes are resampled to before flattening in `ablation_raw`.
    pub raw_side: usize,
    pub curve_sizes: Vec<usize>,
    pub curve_repeats: usize,
    /// K of the cross-validation run inside every curve repeat.
    pub curve_k: usize,
    pub transfer_sizes: Vec<usize>,
    pub transfer_repeats: usize,
    /// Reconstruction stop threshold for source-cohort training.
    pub source_stop_threshold: f64,
    /// Also run the arm that retrains the CVAE on each target subsample.
    pub without_transfer_arm: bool,
    pub without_transfer_max_iterations: usize,
    /// `None` skips the embeddings of `direct`.
    pub tsne: Option<TsneConfig>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Adds wall-clock seconds to the report, which then differs run to run.
    pub record_wall_clock: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Direct,
            dataset: None,
            source: None,
            target: None,
            cvae: CvaeConfig::desk(16),
            forest: ForestConfig::default(),
            k_values: vec![3, 5, 10, 20],
            feature_mode: FeatureMode::Mean,
            raw_side: 16,
            curve_sizes: vec![10, 20, 40, 60, 78],
            curve_repeats: 100,
            curve_k: 5,
            transfer_sizes: vec![10, 20],
            transfer_repeats: 20,
            source_stop_threshold: TRANSFER_STOP_THRESHOLD,
            without_transfer_arm: true,
            without_transfer_max_iterations: 300,
            tsne: Some(TsneConfig::default()),
            seed: 0,
            output_dir: PathBuf::from("out"),
            record_wall_clock: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.cvae.validate()?;
        self.forest.validate()?;
        if self.k_values.is_empty() || self.k_values.iter().any(|&k| k < 2) {
            return Err(Error::Config("k_values must be non-empty with every k >= 2".into()));
        }
        if self.raw_side < 2 {
            return Err(Error::Config("raw_side must be >= 2".into()));
        }
        if self.curve_repeats == 0 || self.transfer_repeats == 0 {
            return Err(Error::Config("curve and transfer repeats must be >= 1".into()));
        }
        if !(self.source_stop_threshold > 0.0) || self.without_transfer_max_iterations == 0 {
            return Err(Error::Config(
                "source_stop_threshold must be > 0 and without_transfer_max_iterations >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Checks that the dataset paths the kind needs are present.
    pub fn validate_paths(&self) -> Result<()> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.as_ref()
                .map(|_| ())
                .ok_or_else(|| Error::Config(format!("{:?} experiment needs a {what} path", self.kind)))
        };
        match self.kind {
            ExperimentKind::Transfer => {
                need(&self.source, "source")?;
                need(&self.target, "target")?;
            }
            _ => need(&self.dataset, "dataset")?,
        }
        Ok(())
    }

    /// Derived seed for one named purpose.
    pub fn seed_for(&self, purpose: SeedPurpose) -> u64 {
        crate::rng::mix(self.seed, purpose as u64)
    }

    pub(crate) fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            seed: self.seed_for(SeedPurpose::Forest) ^ self.forest.seed,
            ..self.forest.clone()
        }
    }
}

/// What each derived seed drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPurpose {
    Training = 1,
    Folds = 2,
    Forest = 3,
    FeatureNoise = 4,
    Curve = 5,
    Embedding = 6,
    WithoutTransfer = 7,
}

const ALL_PURPOSES: [SeedPurpose; 7] = [
    SeedPurpose::Training,
    SeedPurpose::Folds,
    SeedPurpose::Forest,
    SeedPurpose::FeatureNoise,
    SeedPurpose::Curve,
    SeedPurpose::Embedding,
    SeedPurpose::WithoutTransfer,
];

/// Cross-validation results for one feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub dimension: usize,
    pub n_subjects: usize,
    pub features_file: Option<String>,
    pub cv: Vec<CvReport>,
    /// Silhouette of the t-SNE embedding grouped by label.
    pub silhouette: Option<f64>,
}

impl ConditionResult {
    pub fn mean_for(&self, k: usize) -> Option<f64> {
        self.cv.iter().find(|r| r.k == k).map(|r| r.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub arm: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub name: String,
    pub seed: u64,
    pub n_subjects: usize,
    pub iterations: usize,
    pub final_recon_mse: f64,
    pub converged: bool,
    pub stop_threshold: f64,
    pub checkpoint: Option<String>,
    pub params_checksum: String,
    /// Checksum once every downstream use is done; equal to
    /// `params_checksum` when the model stayed frozen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum_after_use: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl Provenance {
    fn for_spec(spec: &ExperimentSpec) -> Self {
        let seeds = ALL_PURPOSES
            .iter()
            .map(|&p| {
                let name = serde_json::to_value(p).expect("unit enum").as_str().unwrap_or_default().to_string();
                (name, spec.seed_for(p))
            })
            .collect();
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seeds,
            wall_clock_seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub conditions: Vec<ConditionResult>,
    pub curves: Vec<CurveResult>,
    pub training: Vec<TrainingSummary>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn curve(&self, arm: &str) -> Option<&CurveResult> {
        self.curves.iter().find(|c| c.arm == arm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Loads the datasets named in `spec` and runs its experiment, writing
/// `report.json` under the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    spec.validate_paths()?;
    let load = |p: &Option<PathBuf>| LabeledDataset::load(p.as_ref().expect("validated"));
    match spec.kind {
        ExperimentKind::Direct => run_direct(spec, &load(&spec.dataset)?),
        ExperimentKind::AblationRaw => run_ablation_raw(spec, &load(&spec.dataset)?),
        ExperimentKind::SampleCurve => run_sample_curve(spec, &load(&spec.dataset)?),
        ExperimentKind::Transfer => run_transfer(spec, &load(&spec.source)?, &load(&spec.target)?),
    }
}

#[cfg(test)]
mod tests;
