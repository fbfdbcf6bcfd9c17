use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{kfold_accuracy, sample_size_curve, write_cv_csv, write_curve_csv, CurvePoint, CvReport, RepeatPlan};
use crate::cvae::{
    features_from_posteriors, load_checkpoint, params_checksum, posteriors, save_checkpoint, train, CvaeConfig, CvaeModel, Encoder,
    FeatureMatrix, FeatureMode, TrainOutcome,
};
use crate::dataio::{preprocess, Label, LabeledDataset};
use crate::embed2d::{silhouette, tsne_embed, write_embedding_csv, write_embedding_svg, write_trace_csv, EmbeddedPoint};
use crate::error::{Error, Result};
use crate::rng;

use super::{ConditionResult, CurveResult, ExperimentKind, ExperimentReport, ExperimentSpec, Provenance, SeedPurpose, TrainingSummary};

/// Which encoder feeds the positive rows of a feature matrix. Control rows
/// always come from the background encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Salient,
    Shared,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Salient => "salient",
            Condition::Shared => "shared",
        }
    }
}

/// Feature matrix of one condition, in dataset order. `Sampled` mode draws
/// salient and background noise from streams `mix(noise_seed, 0)` and
/// `mix(noise_seed, 1)`.
pub fn condition_features(
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    condition: Condition,
    mode: FeatureMode,
    noise_seed: u64,
) -> Result<FeatureMatrix> {
    let bg_post = posteriors(model, dataset, Encoder::Background)?;
    let mut m = features_from_posteriors(dataset, &bg_post, Encoder::Background, mode, rng::mix(noise_seed, 1), 0)?;
    if condition == Condition::Salient {
        let sal_post = posteriors(model, dataset, Encoder::Salient)?;
        let sal = features_from_posteriors(dataset, &sal_post, Encoder::Salient, mode, rng::mix(noise_seed, 0), 0)?;
        for i in dataset.indices_of(Label::Positive) {
            m.values.row_mut(i).assign(&sal.values.row(i));
        }
        m.source = Encoder::Salient;
    }
    if model.training_meta().is_none() {
        m.warnings.push("features extracted from an untrained model".into());
    }
    Ok(m)
}

/// Preprocessed volumes resampled to `side` and flattened, one row each.
pub fn raw_features(dataset: &LabeledDataset, side: usize) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f32>> = dataset
        .subjects()
        .par_iter()
        .map(|s| Ok(preprocess(&s.volume, side)?.into_voxels()))
        .collect::<Result<_>>()?;
    let d = side.pow(3);
    Ok(Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j] as f64))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn started(spec: &ExperimentSpec) -> Result<(Instant, Provenance)> {
    spec.validate()?;
    Ok((Instant::now(), Provenance::for_spec(spec)))
}

fn finish(spec: &ExperimentSpec, mut report: ExperimentReport, t0: Instant) -> Result<ExperimentReport> {
    if spec.record_wall_clock {
        report.provenance.wall_clock_seconds = Some(t0.elapsed().as_secs_f64());
    }
    report.save(spec.output_dir.join("report.json"))?;
    Ok(report)
}

/// Trains and checkpoints one model; the trace goes to `<name>_trace.csv`.
pub(crate) fn train_and_save(
    name: &str,
    config: &CvaeConfig,
    dataset: &LabeledDataset,
    seed: u64,
    out: &Path,
) -> Result<(TrainOutcome, TrainingSummary)> {
    println!("training {name} on {} subjects", dataset.len());
    let outcome = train(config, dataset, seed)?;
    let meta = outcome.model.training_meta().cloned().expect("trained");
    let ckpt = format!("{name}.json");
    save_checkpoint(&outcome.model, out.join(&ckpt))?;
    let mut w = csv::Writer::from_path(out.join(format!("{name}_trace.csv")))?;
    w.write_record(["iteration", "loss", "recon_mse"])?;
    for r in &outcome.trace {
        w.write_record([r.iteration.to_string(), r.loss.to_string(), r.recon_mse.to_string()])?;
    }
    w.flush()?;
    println!(
        "  {} iterations, final recon mse {:.5}{}",
        meta.iterations,
        meta.final_recon_mse,
        if meta.converged { "" } else { " (iteration cap reached)" }
    );
    let summary = TrainingSummary {
        name: name.into(),
        seed,
        n_subjects: dataset.len(),
        iterations: meta.iterations,
        final_recon_mse: meta.final_recon_mse,
        converged: meta.converged,
        stop_threshold: config.recon_stop_threshold,
        checkpoint: Some(ckpt),
        params_checksum: params_checksum(&outcome.model),
        checksum_after_use: None,
    };
    Ok((outcome, summary))
}

fn cv_for_all_k(spec: &ExperimentSpec, x: &Array2<f64>, labels: &[usize]) -> Result<Vec<CvReport>> {
    let forest = spec.forest_config();
    spec.k_values
        .iter()
        .map(|&k| kfold_accuracy(x.view(), labels, k, rng::mix(spec.seed_for(SeedPurpose::Folds), k as u64), &forest))
        .collect()
}

fn write_table(path: &Path, conditions: &[ConditionResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["condition", "k", "mean", "std"])?;
    for c in conditions {
        for r in &c.cv {
            w.write_record([c.name.clone(), r.k.to_string(), r.mean.to_string(), r.std.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn embed_condition(spec: &ExperimentSpec, m: &FeatureMatrix, condition: Condition, out: &Path) -> Result<Option<f64>> {
    let Some(cfg) = &spec.tsne else { return Ok(None) };
    let cfg = crate::embed2d::TsneConfig {
        seed: spec.seed_for(SeedPurpose::Embedding),
        ..cfg.clone()
    };
    let res = tsne_embed(m.values.view(), &cfg)?;
    let points: Vec<EmbeddedPoint> = (0..m.n_rows())
        .map(|i| EmbeddedPoint {
            id: m.subject_ids[i].clone(),
            x: res.embedding[[i, 0]],
            y: res.embedding[[i, 1]],
            label: m.labels[i].to_string(),
            channel: if condition == Condition::Salient && m.labels[i] == Label::Positive {
                "salient".into()
            } else {
                "background".into()
            },
        })
        .collect();
    let name = condition.name();
    write_embedding_csv(out.join(format!("tsne_{name}.csv")), &points)?;
    write_embedding_svg(out.join(format!("tsne_{name}.svg")), &points)?;
    write_trace_csv(out.join(format!("tsne_{name}_trace.csv")), &res.kl_trace)?;
    Ok(Some(silhouette(res.embedding.view(), &m.label_indices())?))
}

/// Cross-validation and embedding of both conditions with a trained model.
pub(crate) fn direct_with_model(
    spec: &ExperimentSpec,
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    out: &Path,
) -> Result<(Vec<ConditionResult>, Vec<String>)> {
    let labels = dataset.label_indices();
    let mut conditions = Vec::new();
    let mut warnings = Vec::new();
    for condition in [Condition::Salient, Condition::Shared] {
        let m = condition_features(model, dataset, condition, spec.feature_mode, spec.seed_for(SeedPurpose::FeatureNoise))?;
        let file = format!("features_{}.csv", condition.name());
        m.write_csv(out.join(&file))?;
        let cv = cv_for_all_k(spec, &m.values, &labels)?;
        write_cv_csv(out.join(format!("cv_{}.csv", condition.name())), &cv)?;
        for r in &cv {
            println!("  {} k={:<2} accuracy {:.4} +/- {:.4}", condition.name(), r.k, r.mean, r.std);
            warnings.extend(r.warnings.iter().map(|w| format!("{} k={}: {w}", condition.name(), r.k)));
        }
        let silhouette = embed_condition(spec, &m, condition, out)?;
        warnings.extend(m.warnings.iter().cloned());
        conditions.push(ConditionResult {
            name: condition.name().into(),
            dimension: m.dim(),
            n_subjects: m.n_rows(),
            features_file: Some(file),
            cv,
            silhouette,
        });
    }
    write_table(&out.join("accuracy.csv"), &conditions)?;
    warnings.dedup();
    Ok((conditions, warnings))
}

fn empty_report(spec: &ExperimentSpec, kind: ExperimentKind, provenance: Provenance) -> ExperimentReport {
    ExperimentReport {
        spec: ExperimentSpec { kind, ..spec.clone() },
        conditions: Vec::new(),
        curves: Vec::new(),
        training: Vec::new(),
        provenance,
        warnings: Vec::new(),
    }
}

/// Trains on the whole cohort and compares salient-condition with
/// shared-condition features at every K.
pub fn run_direct(spec: &ExperimentSpec, dataset: &LabeledDataset) -> Result<ExperimentReport> {
    let (t0, prov) = started(spec)?;
    let out = &spec.output_dir;
    prepare_dir(out)?;
    let mut report = empty_report(spec, ExperimentKind::Direct, prov);
    let (outcome, summary) = train_and_save("model", &spec.cvae, dataset, spec.seed_for(SeedPurpose::Training), out)?;
    report.training.push(summary);
    let (conditions, warnings) = direct_with_model(spec, &outcome.model, dataset, out)?;
    report.conditions = conditions;
    report.warnings = warnings;
    finish(spec, report, t0)
}

/// The forest protocol of `run_direct` on flattened voxels, with the same
/// folds and forest seeds.
pub fn run_ablation_raw(spec: &ExperimentSpec, dataset: &LabeledDataset) -> Result<ExperimentReport> {
    let (t0, prov) = started(spec)?;
    let out = &spec.output_dir;
    prepare_dir(out)?;
    let mut report = empty_report(spec, ExperimentKind::AblationRaw, prov);
    let x = raw_features(dataset, spec.raw_side)?;
    let cv = cv_for_all_k(spec, &x, &dataset.label_indices())?;
    write_cv_csv(out.join("cv_raw.csv"), &cv)?;
    for r in &cv {
        println!("  raw k={:<2} accuracy {:.4} +/- {:.4}", r.k, r.mean, r.std);
    }
    report.conditions.push(ConditionResult {
        name: "raw".into(),
        dimension: x.ncols(),
        n_subjects: x.nrows(),
        features_file: None,
        cv,
        silhouette: None,
    });
    write_table(&out.join("accuracy_raw.csv"), &report.conditions)?;
    report.warnings.push(format!("raw voxels resampled to side {}", spec.raw_side));
    finish(spec, report, t0)
}

pub(crate) fn curve_with_model(
    spec: &ExperimentSpec,
    model: &CvaeModel<f32>,
    dataset: &LabeledDataset,
    out: &Path,
) -> Result<CurveResult> {
    let m = condition_features(model, dataset, Condition::Salient, spec.feature_mode, spec.seed_for(SeedPurpose::FeatureNoise))?;
    let points = sample_size_curve(
        m.values.view(),
        &m.label_indices(),
        &spec.curve_sizes,
        spec.curve_repeats,
        spec.curve_k,
        spec.seed_for(SeedPurpose::Curve),
        &spec.forest_config(),
    )?;
    for p in &points {
        println!("  size {:<3} accuracy {:.4} +/- {:.4}", p.size, p.mean, p.std);
    }
    write_curve_csv(out.join("curve.csv"), &points)?;
    Ok(CurveResult {
        arm: "salient".into(),
        points,
    })
}

/// Accuracy against cohort size on salient-condition features of a model
/// trained on the whole cohort.
pub fn run_sample_curve(spec: &ExperimentSpec, dataset: &LabeledDataset) -> Result<ExperimentReport> {
    let (t0, prov) = started(spec)?;
    let out = &spec.output_dir;
    prepare_dir(out)?;
    let mut report = empty_report(spec, ExperimentKind::SampleCurve, prov);
    let (outcome, summary) = train_and_save("model", &spec.cvae, dataset, spec.seed_for(SeedPurpose::Training), out)?;
    report.training.push(summary);
    report.curves.push(curve_with_model(spec, &outcome.model, dataset, out)?);
    finish(spec, report, t0)
}

fn write_paired_curves(path: &Path, with: &[CurvePoint], without: Option<&[CurvePoint]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["size", "with_mean", "with_std", "without_mean", "without_std"])?;
    for (i, p) in with.iter().enumerate() {
        let (m, s) = without.map_or((String::new(), String::new()), |wo| (wo[i].mean.to_string(), wo[i].std.to_string()));
        w.write_record([p.size.to_string(), p.mean.to_string(), p.std.to_string(), m, s])?;
    }
    w.flush()?;
    Ok(())
}

/// Without-transfer arm: every repeat retrains the CVAE on its own target
/// subsample, with batch size `min(batch_size, smallest class)`, then scores
/// it with the subsample, folds and forest seeds of the with-transfer repeat.
fn without_transfer_curve(spec: &ExperimentSpec, target: &LabeledDataset) -> Result<Vec<CurvePoint>> {
    let labels = target.label_indices();
    let forest = spec.forest_config();
    let curve_seed = spec.seed_for(SeedPurpose::Curve);
    let mut points = Vec::new();
    for &size in &spec.transfer_sizes {
        let accuracies: Vec<f64> = (0..spec.transfer_repeats)
            .into_par_iter()
            .map(|r| {
                let plan = RepeatPlan::new(&labels, size, r, curve_seed, &forest)?;
                let sub = target.subset(&plan.indices)?;
                let smallest = sub.count(Label::Positive).min(sub.count(Label::Control));
                let cfg = CvaeConfig {
                    batch_size: spec.cvae.batch_size.min(smallest).max(1),
                    max_iterations: spec.without_transfer_max_iterations,
                    ..spec.cvae.clone()
                };
                let key = (size as u64) << 32 | r as u64;
                let model = train(&cfg, &sub, rng::mix(spec.seed_for(SeedPurpose::WithoutTransfer), key))?.model;
                let m = condition_features(&model, &sub, Condition::Salient, spec.feature_mode, spec.seed_for(SeedPurpose::FeatureNoise))?;
                Ok(kfold_accuracy(m.values.view(), &m.label_indices(), spec.curve_k, plan.fold_seed, &plan.forest)?.mean)
            })
            .collect::<Result<_>>()?;
        let (mean, std) = crate::classifier::mean_std(&accuracies);
        println!("  without transfer size {size:<3} accuracy {mean:.4} +/- {std:.4}");
        points.push(CurvePoint {
            size,
            mean,
            std,
            repeats: spec.transfer_repeats,
            accuracies,
        });
    }
    Ok(points)
}

/// Trains on `source`, freezes the model, and classifies `target` through
/// it at every K and along the target sample-size curve.
pub fn run_transfer(spec: &ExperimentSpec, source: &LabeledDataset, target: &LabeledDataset) -> Result<ExperimentReport> {
    let (t0, prov) = started(spec)?;
    let out = &spec.output_dir;
    prepare_dir(out)?;
    let mut report = empty_report(spec, ExperimentKind::Transfer, prov);
    let src_cfg = CvaeConfig {
        recon_stop_threshold: spec.source_stop_threshold,
        ..spec.cvae.clone()
    };
    let (outcome, mut summary) =
        train_and_save("source_model", &src_cfg, source, spec.seed_for(SeedPurpose::Training), out)?;
    let model = outcome.model;
    let m = condition_features(&model, target, Condition::Salient, spec.feature_mode, spec.seed_for(SeedPurpose::FeatureNoise))?;
    m.write_csv(out.join("features_target.csv"))?;
    let labels = m.label_indices();
    let usable: Vec<usize> = spec.k_values.iter().copied().filter(|&k| k <= target.len()).collect();
    if usable.len() < spec.k_values.len() {
        report.warnings.push(format!("k values above the target size {} were skipped", target.len()));
    }
    let cv = ExperimentSpec { k_values: usable, ..spec.clone() };
    let cv = cv_for_all_k(&cv, &m.values, &labels)?;
    write_cv_csv(out.join("cv_target.csv"), &cv)?;
    report.conditions.push(ConditionResult {
        name: "transfer".into(),
        dimension: m.dim(),
        n_subjects: m.n_rows(),
        features_file: Some("features_target.csv".into()),
        cv,
        silhouette: None,
    });
    let with = sample_size_curve(
        m.values.view(),
        &labels,
        &spec.transfer_sizes,
        spec.transfer_repeats,
        spec.curve_k,
        spec.seed_for(SeedPurpose::Curve),
        &spec.forest_config(),
    )?;
    for p in &with {
        println!("  with transfer size {:<3} accuracy {:.4} +/- {:.4}", p.size, p.mean, p.std);
    }
    write_curve_csv(out.join("curve_with_transfer.csv"), &with)?;
    let without = if spec.without_transfer_arm {
        let w = without_transfer_curve(spec, target)?;
        write_curve_csv(out.join("curve_without_transfer.csv"), &w)?;
        Some(w)
    } else {
        None
    };
    write_paired_curves(&out.join("transfer_curves.csv"), &with, without.as_deref())?;
    let after = params_checksum(&model);
    let on_disk = params_checksum(&load_checkpoint(out.join("source_model.json"))?);
    if after != summary.params_checksum || on_disk != after {
        return Err(Error::Data("source model changed while classifying the target cohort".into()));
    }
    summary.checksum_after_use = Some(after);
    report.training.push(summary);
    report.curves.push(CurveResult {
        arm: "with_transfer".into(),
        points: with,
    });
    if let Some(points) = without {
        report.curves.push(CurveResult {
            arm: "without_transfer".into(),
            points,
        });
    }
    finish(spec, report, t0)
}
