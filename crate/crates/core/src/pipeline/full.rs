use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{generate_phantoms, LabeledDataset, PhantomConfig};
use crate::error::Result;
use crate::rng;
use crate::rsa::{rsa_report, write_rsa_csv, write_rsa_svg, RsaConfig, RsaReport};

use super::experiments::{curve_with_model, direct_with_model, train_and_save};
use super::{
    run_ablation_raw, run_transfer, ExperimentKind, ExperimentReport, ExperimentSpec, Provenance, SeedPurpose,
};

/// Every experiment in one run. Cohorts are phantoms unless a manifest path
/// is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cohort: PhantomConfig,
    pub cohort_path: Option<PathBuf>,
    pub source: PhantomConfig,
    pub source_path: Option<PathBuf>,
    pub target: PhantomConfig,
    pub target_path: Option<PathBuf>,
    /// Shared settings; `kind`, paths and `output_dir` are set per experiment.
    pub experiment: ExperimentSpec,
    pub rsa: RsaConfig,
    pub run_curve: bool,
    pub run_transfer: bool,
    pub run_rsa: bool,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cohort: PhantomConfig {
                side: 16,
                ..PhantomConfig::default()
            },
            cohort_path: None,
            source: PhantomConfig {
                n_positive: 200,
                n_control: 200,
                side: 16,
                seed: 1001,
                ..PhantomConfig::default()
            },
            source_path: None,
            target: PhantomConfig {
                n_positive: 10,
                n_control: 10,
                side: 16,
                seed: 2002,
                ..PhantomConfig::default()
            },
            target_path: None,
            experiment: ExperimentSpec::default(),
            rsa: RsaConfig::default(),
            run_curve: true,
            run_transfer: true,
            run_rsa: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub direct: ExperimentReport,
    pub ablation: ExperimentReport,
    pub curve: Option<ExperimentReport>,
    pub transfer: Option<ExperimentReport>,
    pub rsa: Option<RsaReport>,
}

fn cohort(phantom: &PhantomConfig, path: &Option<PathBuf>) -> Result<LabeledDataset> {
    match path {
        Some(p) => LabeledDataset::load(p),
        None => generate_phantoms(phantom),
    }
}

/// Direct, raw-voxel ablation, sample-size curve, transfer and RSA, each in
/// its own subdirectory of `output_dir`, plus a combined `report.json`.
/// The curve and RSA reuse the model trained for the direct experiment.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    let t0 = Instant::now();
    let base = &config.experiment;
    let sub = |kind, dir: &str| ExperimentSpec {
        kind,
        output_dir: config.output_dir.join(dir),
        ..base.clone()
    };
    let data = cohort(&config.cohort, &config.cohort_path)?;

    println!("direct experiment");
    let spec = sub(ExperimentKind::Direct, "direct");
    spec.validate()?;
    std::fs::create_dir_all(&spec.output_dir)?;
    let (outcome, summary) =
        train_and_save("model", &spec.cvae, &data, spec.seed_for(SeedPurpose::Training), &spec.output_dir)?;
    let model = outcome.model;
    let (conditions, warnings) = direct_with_model(&spec, &model, &data, &spec.output_dir)?;
    let direct = ExperimentReport {
        spec: spec.clone(),
        conditions,
        curves: Vec::new(),
        training: vec![summary.clone()],
        provenance: Provenance::for_spec(&spec),
        warnings,
    };
    direct.save(spec.output_dir.join("report.json"))?;

    println!("raw-voxel ablation");
    let ablation = run_ablation_raw(&sub(ExperimentKind::AblationRaw, "ablation"), &data)?;

    let curve = if config.run_curve {
        println!("sample-size curve");
        let spec = sub(ExperimentKind::SampleCurve, "curve");
        std::fs::create_dir_all(&spec.output_dir)?;
        let c = curve_with_model(&spec, &model, &data, &spec.output_dir)?;
        let report = ExperimentReport {
            spec: spec.clone(),
            conditions: Vec::new(),
            curves: vec![c],
            training: vec![summary],
            provenance: Provenance::for_spec(&spec),
            warnings: vec!["model shared with the direct experiment".into()],
        };
        report.save(spec.output_dir.join("report.json"))?;
        Some(report)
    } else {
        None
    };

    let transfer = if config.run_transfer {
        println!("transfer experiment");
        let source = cohort(&config.source, &config.source_path)?;
        let target = cohort(&config.target, &config.target_path)?;
        Some(run_transfer(&sub(ExperimentKind::Transfer, "transfer"), &source, &target)?)
    } else {
        None
    };

    let rsa = if config.run_rsa && data.region_table().is_some() {
        println!("representational similarity analysis");
        let dir = config.output_dir.join("rsa");
        std::fs::create_dir_all(&dir)?;
        let cfg = RsaConfig {
            seed: rng::mix(base.seed, 8) ^ config.rsa.seed,
            ..config.rsa.clone()
        };
        let report = rsa_report(&model, &data, &cfg)?;
        write_rsa_csv(dir.join("rsa.csv"), &report)?;
        write_rsa_svg(dir.join("rsa.svg"), &report)?;
        std::fs::write(dir.join("rsa_summary.txt"), &report.summary)?;
        print!("{}", report.summary);
        Some(report)
    } else {
        None
    };

    let report = PipelineReport {
        config: config.clone(),
        direct,
        ablation,
        curve,
        transfer,
        rsa,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(config.output_dir.join("report.json"), text)?;
    if base.record_wall_clock {
        println!("pipeline finished in {:.1} s", t0.elapsed().as_secs_f64());
    }
    Ok(report)
}
