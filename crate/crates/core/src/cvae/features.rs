use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{preprocess, Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;

use super::config::Encoder;
use super::model::CvaeModel;

/// Posterior of one encoder for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentGaussian {
    /// `mu + exp(logvar / 2) * eps`.
    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Mean,
    Sampled,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(FeatureMode::Mean),
            "sampled" => Ok(FeatureMode::Sampled),
            other => Err(Error::Input(format!("unknown feature mode {other:?}"))),
        }
    }
}

/// One latent row per subject.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub subject_ids: Vec<String>,
    pub labels: Vec<Label>,
    pub values: Array2<f64>,
    pub source: Encoder,
    pub mode: FeatureMode,
    pub sample_index: Option<usize>,
    pub warnings: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        labels: Vec<Label>,
        values: Array2<f64>,
        source: Encoder,
        mode: FeatureMode,
    ) -> Result<Self> {
        if subject_ids.len() != labels.len() || values.nrows() != labels.len() {
            return Err(Error::shape(
                "FeatureMatrix",
                format!(
                    "{} ids, {} labels, {} rows",
                    subject_ids.len(),
                    labels.len(),
                    values.nrows()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("feature matrix has non-finite entries".into()));
        }
        Ok(Self {
            subject_ids,
            labels,
            values,
            source,
            mode,
            sample_index: None,
            warnings: Vec::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }

    /// Stacks the rows of `self` above those of `other`.
    pub fn stack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::shape("FeatureMatrix::stack", "column counts differ"));
        }
        let mut values = Array2::zeros((self.n_rows() + other.n_rows(), self.dim()));
        values.slice_mut(ndarray::s![..self.n_rows(), ..]).assign(&self.values);
        values.slice_mut(ndarray::s![self.n_rows().., ..]).assign(&other.values);
        let mut m = FeatureMatrix::new(
            self.subject_ids.iter().chain(&other.subject_ids).cloned().collect(),
            self.labels.iter().chain(&other.labels).copied().collect(),
            values,
            self.source,
            self.mode,
        )?;
        m.warnings = self.warnings.iter().chain(&other.warnings).cloned().collect();
        Ok(m)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let values = self.values.select(ndarray::Axis(0), indices);
        FeatureMatrix {
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            values,
            source: self.source,
            mode: self.mode,
            sample_index: self.sample_index,
            warnings: self.warnings.clone(),
        }
    }

    /// `subject_id,label,f0..f{d-1}` CSV.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["subject_id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.subject_ids[i].clone(), self.labels[i].to_string()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior of `which` for every subject, in dataset order. Volumes are
/// preprocessed to the model's input side first.
pub fn posteriors(
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    which: Encoder,
) -> Result<Vec<LatentGaussian>> {
    let side = model.config().input_side;
    dataset
        .subjects()
        .par_iter()
        .map(|s| {
            let v = preprocess(&s.volume, side)?;
            let (mu, lv) = model.encode(which, v.voxels())?;
            Ok(LatentGaussian {
                mu: mu.iter().map(|&x| x as f64).collect(),
                logvar: lv.iter().map(|&x| x as f64).collect(),
            })
        })
        .collect()
}

/// Standard-normal noise for subject `subject` and draw `sample_index`.
pub(crate) fn subject_noise(noise_seed: u64, sample_index: usize, subject: usize, dim: usize) -> Vec<f64> {
    let mut r = rng::derive(rng::mix(noise_seed, sample_index as u64), subject as u64);
    (0..dim).map(|_| r.sample(StandardNormal)).collect()
}

/// Builds a feature matrix from precomputed posteriors. `Sampled` mode uses
/// draw `sample_index` of the per-subject noise stream of `noise_seed`.
pub fn features_from_posteriors(
    dataset: &LabeledDataset,
    posts: &[LatentGaussian],
    which: Encoder,
    mode: FeatureMode,
    noise_seed: u64,
    sample_index: usize,
) -> Result<FeatureMatrix> {
    if posts.len() != dataset.len() {
        return Err(Error::shape("features_from_posteriors", "one posterior per subject required"));
    }
    let dim = posts.first().map_or(0, |p| p.mu.len());
    let mut values = Array2::zeros((posts.len(), dim));
    for (i, p) in posts.iter().enumerate() {
        let row = match mode {
            FeatureMode::Mean => p.mu.clone(),
            FeatureMode::Sampled => p.sample(&subject_noise(noise_seed, sample_index, i, dim)),
        };
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let mut m = FeatureMatrix::new(dataset.ids(), dataset.labels(), values, which, mode)?;
    if mode == FeatureMode::Sampled {
        m.sample_index = Some(sample_index);
    }
    Ok(m)
}

/// Latent features of every subject of `dataset` through one encoder.
pub fn extract_features(
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    which: Encoder,
    mode: FeatureMode,
    noise_seed: u64,
) -> Result<FeatureMatrix> {
    let posts = posteriors(model, dataset, which)?;
    let mut m = features_from_posteriors(dataset, &posts, which, mode, noise_seed, 0)?;
    if model.training_meta().is_none() {
        m.warnings.push("features extracted from an untrained model".into());
    }
    Ok(m)
}
