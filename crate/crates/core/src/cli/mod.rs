//! Command-line front end.
//!
//! Every subcommand resolves its configuration in three layers: built-in
//! defaults, then the JSON file given with `--config`, then flags. The
//! resolved configuration is written to `provenance.json` in the output
//! directory before any work starts, so a run can be repeated from that file
//! alone. Data goes to files under the output directory, progress to
//! standard output, errors to standard error.
//!
//! Exit codes: 0 on success, 1 for bad flags or configuration, 2 for runtime
//! failures such as divergence or I/O errors.

mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{kfold_accuracy, sample_size_curve, write_cv_csv, write_curve_csv, ForestConfig};
use crate::cvae::{load_checkpoint, save_checkpoint, train, CvaeConfig, Encoder, FeatureMode};
use crate::dataio::{generate_phantoms, LabeledDataset, PhantomConfig};
use crate::embed2d::{silhouette, tsne_embed, write_embedding_csv, write_embedding_svg, write_trace_csv, EmbeddedPoint, TsneConfig, TsneInit};
use crate::error::{Error, Result};
use crate::pipeline::{self, condition_features, Condition, ExperimentKind, ExperimentSpec, PipelineConfig};
use crate::rsa::{rsa_report, write_rsa_csv, write_rsa_svg, RsaConfig};

use io::{read_features, write_labels};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CONTRAST3D_OUT";

#[derive(Debug, Parser)]
#[command(name = "contrast3d", version, about = "Contrastive VAE experiments on volumetric cohorts")]
pub struct Cli {
    /// Output directory [default: $CONTRAST3D_OUT, else the config's output_dir, else ./out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for internal parallelism; results do not depend on it
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom cohort: manifest, volumes and region table
    Synth(SynthArgs),
    /// Train a CVAE on a dataset and write its checkpoint
    Train(TrainArgs),
    /// Extract latent features from a checkpoint
    Extract(ExtractArgs),
    /// K-fold random-forest accuracy of a feature file
    Classify(ClassifyArgs),
    /// Accuracy against sample size on a feature file
    Curve(CurveArgs),
    /// Source-trained, frozen CVAE applied to a target cohort
    Transfer(TransferArgs),
    /// Representational similarity analysis of a checkpoint against region scalars
    Rsa(RsaArgs),
    /// Exact t-SNE embedding of a feature file
    Tsne(TsneArgs),
    /// Direct, ablation, curve, transfer and RSA experiments in one run
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON phantom configuration [default: built-in phantom defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Positive subjects [default: 42]
    #[arg(long)]
    pub n_positive: Option<usize>,
    /// Control subjects [default: 36]
    #[arg(long)]
    pub n_control: Option<usize>,
    /// Volume side in voxels [default: 32]
    #[arg(long)]
    pub side: Option<usize>,
    /// Depth of the planted salient dip [default: 0.35]
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Voxel noise standard deviation [default: 0.02]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration with `dataset`, `seed` and a `cvae` section [default: desk model at side 16]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (required here or in the config)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Model input side; resets the architecture to the desk model at this side [default: 16]
    #[arg(long)]
    pub side: Option<usize>,
    /// Iteration cap [default: 1500]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Subjects per class per batch [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Reconstruction-MSE stop threshold [default: 0.0005]
    #[arg(long)]
    pub stop_threshold: Option<f64>,
    /// Training seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    /// Salient encoder for every subject
    Salient,
    /// Background encoder for every subject
    Background,
    /// Salient encoder for positives, background encoder for controls
    SalientCondition,
    /// Background encoder for every subject, labelled for the shared condition
    SharedCondition,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// JSON extraction configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint manifest (required here or in the config)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest (required here or in the config)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Which encoders feed the rows [default: salient-condition]
    #[arg(long, value_enum)]
    pub set: Option<FeatureSet>,
    /// Posterior means or one reparameterized draw [default: mean]
    #[arg(long)]
    pub mode: Option<String>,
    /// Noise seed for sampled mode [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// JSON classification configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature CSV with `subject_id` and optional `label` columns (required here or in the config)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label CSV `subject_id,label`; overrides labels in the feature file [default: none]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Fold counts, comma separated [default: 3,5,10,20]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Trees per forest [default: 100]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Seed for folds and forests [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// JSON curve configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature CSV (required here or in the config)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label CSV `subject_id,label` [default: none]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Subsample sizes, comma separated [default: 10,20,40,60,78]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Subsamples per size [default: 100]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Folds inside each repeat [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Trees per forest [default: 100]
    #[arg(long)]
    pub trees: Option<usize>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// JSON experiment spec [default: desk experiment defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Source dataset manifest (required here or in the config)
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target dataset manifest (required here or in the config)
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Target subsample sizes, comma separated [default: 10,20]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Subsamples per size [default: 20]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Skip the retrain-per-subsample arm [default: run it]
    #[arg(long)]
    pub no_without_arm: bool,
    /// Source training iteration cap [default: 1500]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Experiment seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RsaArgs {
    /// JSON RSA configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint manifest (required here or in the config)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest with a region table (required here or in the config)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Permutations per test [default: 10000]
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Latent draws per subject [default: 10]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Significance level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    /// JSON t-SNE configuration [default: none]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature CSV (required here or in the config)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Label CSV `subject_id,label` [default: none]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Perplexity [default: min(30, (n - 1) / 3)]
    #[arg(long)]
    pub perplexity: Option<f64>,
    /// Gradient iterations [default: 1000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Initialization: pca or random [default: pca]
    #[arg(long)]
    pub init: Option<String>,
    /// Seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON pipeline configuration [default: desk pipeline defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// CVAE iteration cap for every trained model [default: 1500]
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub cvae: CvaeConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub set: FeatureSet,
    pub mode: FeatureMode,
    pub seed: u64,
}

impl Default for ExtractRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            dataset: None,
            set: FeatureSet::SalientCondition,
            mode: FeatureMode::Mean,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyRun {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub k_values: Vec<usize>,
    pub seed: u64,
    pub forest: ForestConfig,
}

impl Default for ClassifyRun {
    fn default() -> Self {
        Self {
            features: None,
            labels: None,
            k_values: vec![3, 5, 10, 20],
            seed: 0,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveRun {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub k: usize,
    pub seed: u64,
    pub forest: ForestConfig,
}

impl Default for CurveRun {
    fn default() -> Self {
        Self {
            features: None,
            labels: None,
            sizes: vec![10, 20, 40, 60, 78],
            repeats: 100,
            k: 5,
            seed: 0,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RsaRun {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub rsa: RsaConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneRun {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub tsne: TsneConfig,
}

#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    subcommand: &'a str,
    crate_version: &'a str,
    threads: usize,
    output_dir: &'a Path,
    config: &'a C,
}

/// Deep merge of `over` into `base`; objects merge key by key, anything
/// else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Defaults overlaid with the JSON file at `path`.
fn layered<C: Serialize + DeserializeOwned>(defaults: C, path: Option<&Path>) -> Result<C> {
    let Some(path) = path else { return Ok(defaults) };
    let text = std::fs::read_to_string(path)?;
    let file: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !file.is_object() {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    }
    let mut v = serde_json::to_value(defaults)?;
    merge(&mut v, file);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("missing {what}: pass --{what} or set it in the config")))
}

fn output_dir(flag: &Option<PathBuf>, from_config: Option<&Path>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| from_config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn start<C: Serialize>(name: &str, cli: &Cli, out: &Path, config: &C) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let p = Provenance {
        subcommand: name,
        crate_version: env!("CARGO_PKG_VERSION"),
        threads: cli.threads,
        output_dir: out,
        config,
    };
    let mut text = serde_json::to_string_pretty(&p)?;
    text.push('\n');
    std::fs::write(out.join("provenance.json"), text)?;
    println!("{name}: writing to {}", out.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_mode(s: &str) -> Result<FeatureMode> {
    s.parse()
}

fn run_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut c = layered(PhantomConfig::default(), a.config.as_deref())?;
    if let Some(v) = a.n_positive {
        c.n_positive = v;
    }
    if let Some(v) = a.n_control {
        c.n_control = v;
    }
    if let Some(v) = a.side {
        c.side = v;
    }
    if let Some(v) = a.amplitude {
        c.salient_amplitude = v;
    }
    if let Some(v) = a.noise {
        c.noise_sigma = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.validate()?;
    let out = output_dir(&cli.out, None);
    start("synth", cli, &out, &c)?;
    let ds = generate_phantoms(&c)?;
    let manifest = ds.save(&out)?;
    println!("{} subjects written, manifest {}", ds.len(), manifest.display());
    Ok(())
}

fn run_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let defaults = TrainRun {
        cvae: CvaeConfig::desk(16),
        ..TrainRun::default()
    };
    let mut c = layered(defaults, a.config.as_deref())?;
    if let Some(side) = a.side {
        c.cvae = CvaeConfig::desk(side);
    }
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = a.max_iterations {
        c.cvae.max_iterations = v;
    }
    if let Some(v) = a.batch_size {
        c.cvae.batch_size = v;
    }
    if let Some(v) = a.stop_threshold {
        c.cvae.recon_stop_threshold = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.cvae.validate()?;
    let ds_path = required(&c.dataset, "dataset")?.to_path_buf();
    let out = output_dir(&cli.out, None);
    start("train", cli, &out, &c)?;
    let ds = LabeledDataset::load(&ds_path)?;
    let outcome = train(&c.cvae, &ds, c.seed)?;
    save_checkpoint(&outcome.model, out.join("model.json"))?;
    let mut w = csv::Writer::from_path(out.join("trace.csv"))?;
    w.write_record(["iteration", "loss", "recon_mse"])?;
    for r in &outcome.trace {
        w.write_record([r.iteration.to_string(), r.loss.to_string(), r.recon_mse.to_string()])?;
    }
    w.flush()?;
    let meta = outcome.model.training_meta().expect("trained");
    println!(
        "{} iterations, final recon mse {:.5}, converged {}",
        meta.iterations, meta.final_recon_mse, meta.converged
    );
    write_json(&out.join("train_report.json"), meta)
}

fn run_extract(cli: &Cli, a: &ExtractArgs) -> Result<()> {
    let mut c = layered(ExtractRun::default(), a.config.as_deref())?;
    if let Some(v) = &a.checkpoint {
        c.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = a.set {
        c.set = v;
    }
    if let Some(v) = &a.mode {
        c.mode = parse_mode(v)?;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    let (ck, dp) = (required(&c.checkpoint, "checkpoint")?, required(&c.dataset, "dataset")?);
    let out = output_dir(&cli.out, None);
    start("extract", cli, &out, &c)?;
    let model = load_checkpoint(ck)?;
    let ds = LabeledDataset::load(dp)?;
    let m = match c.set {
        FeatureSet::Salient => crate::cvae::extract_features(&model, &ds, Encoder::Salient, c.mode, c.seed)?,
        FeatureSet::Background => crate::cvae::extract_features(&model, &ds, Encoder::Background, c.mode, c.seed)?,
        FeatureSet::SalientCondition => condition_features(&model, &ds, Condition::Salient, c.mode, c.seed)?,
        FeatureSet::SharedCondition => condition_features(&model, &ds, Condition::Shared, c.mode, c.seed)?,
    };
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    m.write_csv(out.join("features.csv"))?;
    write_labels(&out.join("labels.csv"), &m.subject_ids, &m.labels)?;
    println!("{} x {} features written", m.n_rows(), m.dim());
    Ok(())
}

fn run_classify(cli: &Cli, a: &ClassifyArgs) -> Result<()> {
    let mut c = layered(ClassifyRun::default(), a.config.as_deref())?;
    if let Some(v) = &a.features {
        c.features = Some(v.clone());
    }
    if let Some(v) = &a.labels {
        c.labels = Some(v.clone());
    }
    if let Some(v) = &a.k {
        c.k_values = v.clone();
    }
    if let Some(v) = a.trees {
        c.forest.n_trees = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.forest.validate()?;
    let fp = required(&c.features, "features")?;
    let out = output_dir(&cli.out, None);
    start("classify", cli, &out, &c)?;
    let f = read_features(fp, c.labels.as_deref())?;
    let forest = ForestConfig {
        seed: crate::rng::mix(c.seed, 3) ^ c.forest.seed,
        ..c.forest.clone()
    };
    let reports = c
        .k_values
        .iter()
        .map(|&k| kfold_accuracy(f.values.view(), &f.labels, k, crate::rng::mix(c.seed, k as u64), &forest))
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        println!("k={:<2} accuracy {:.4} +/- {:.4}", r.k, r.mean, r.std);
    }
    write_cv_csv(out.join("cv.csv"), &reports)?;
    write_json(&out.join("classify_report.json"), &reports)
}

fn run_curve(cli: &Cli, a: &CurveArgs) -> Result<()> {
    let mut c = layered(CurveRun::default(), a.config.as_deref())?;
    if let Some(v) = &a.features {
        c.features = Some(v.clone());
    }
    if let Some(v) = &a.labels {
        c.labels = Some(v.clone());
    }
    if let Some(v) = &a.sizes {
        c.sizes = v.clone();
    }
    if let Some(v) = a.repeats {
        c.repeats = v;
    }
    if let Some(v) = a.k {
        c.k = v;
    }
    if let Some(v) = a.trees {
        c.forest.n_trees = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.forest.validate()?;
    let fp = required(&c.features, "features")?;
    let out = output_dir(&cli.out, None);
    start("curve", cli, &out, &c)?;
    let f = read_features(fp, c.labels.as_deref())?;
    let forest = ForestConfig {
        seed: crate::rng::mix(c.seed, 3) ^ c.forest.seed,
        ..c.forest.clone()
    };
    let points = sample_size_curve(f.values.view(), &f.labels, &c.sizes, c.repeats, c.k, c.seed, &forest)?;
    for p in &points {
        println!("size {:<3} accuracy {:.4} +/- {:.4}", p.size, p.mean, p.std);
    }
    write_curve_csv(out.join("curve.csv"), &points)?;
    write_json(&out.join("curve_report.json"), &points)
}

fn run_transfer_cmd(cli: &Cli, a: &TransferArgs) -> Result<()> {
    let defaults = ExperimentSpec {
        kind: ExperimentKind::Transfer,
        ..ExperimentSpec::default()
    };
    let mut c = layered(defaults, a.config.as_deref())?;
    c.kind = ExperimentKind::Transfer;
    if let Some(v) = &a.source {
        c.source = Some(v.clone());
    }
    if let Some(v) = &a.target {
        c.target = Some(v.clone());
    }
    if let Some(v) = &a.sizes {
        c.transfer_sizes = v.clone();
    }
    if let Some(v) = a.repeats {
        c.transfer_repeats = v;
    }
    if a.no_without_arm {
        c.without_transfer_arm = false;
    }
    if let Some(v) = a.max_iterations {
        c.cvae.max_iterations = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.output_dir = output_dir(&cli.out, Some(&c.output_dir));
    c.validate()?;
    c.validate_paths()?;
    start("transfer", cli, &c.output_dir, &c)?;
    pipeline::run_experiment(&c)?;
    Ok(())
}

fn run_rsa_cmd(cli: &Cli, a: &RsaArgs) -> Result<()> {
    let mut c = layered(RsaRun::default(), a.config.as_deref())?;
    if let Some(v) = &a.checkpoint {
        c.checkpoint = Some(v.clone());
    }
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = a.permutations {
        c.rsa.permutations = v;
    }
    if let Some(v) = a.samples {
        c.rsa.n_samples = v;
    }
    if let Some(v) = a.alpha {
        c.rsa.alpha = v;
    }
    if let Some(v) = a.seed {
        c.rsa.seed = v;
    }
    let (ck, dp) = (required(&c.checkpoint, "checkpoint")?, required(&c.dataset, "dataset")?);
    let out = output_dir(&cli.out, None);
    start("rsa", cli, &out, &c)?;
    let model = load_checkpoint(ck)?;
    let ds = LabeledDataset::load(dp)?;
    let report = rsa_report(&model, &ds, &c.rsa)?;
    print!("{}", report.summary);
    write_rsa_csv(out.join("rsa.csv"), &report)?;
    write_rsa_svg(out.join("rsa.svg"), &report)?;
    write_json(&out.join("rsa_report.json"), &report)
}

fn run_tsne_cmd(cli: &Cli, a: &TsneArgs) -> Result<()> {
    let mut c = layered(TsneRun::default(), a.config.as_deref())?;
    if let Some(v) = &a.features {
        c.features = Some(v.clone());
    }
    if let Some(v) = &a.labels {
        c.labels = Some(v.clone());
    }
    if let Some(v) = a.perplexity {
        c.tsne.perplexity = Some(v);
    }
    if let Some(v) = a.iterations {
        c.tsne.iterations = v;
    }
    if let Some(v) = &a.init {
        c.tsne.init = match v.as_str() {
            "pca" => TsneInit::Pca,
            "random" => TsneInit::Random,
            other => return Err(Error::Config(format!("unknown init {other:?}; expected pca or random"))),
        };
    }
    if let Some(v) = a.seed {
        c.tsne.seed = v;
    }
    let fp = required(&c.features, "features")?;
    let out = output_dir(&cli.out, None);
    start("tsne", cli, &out, &c)?;
    let f = read_features(fp, c.labels.as_deref())?;
    let res = tsne_embed(f.values.view(), &c.tsne)?;
    let points: Vec<EmbeddedPoint> = (0..f.ids.len())
        .map(|i| EmbeddedPoint {
            id: f.ids[i].clone(),
            x: res.embedding[[i, 0]],
            y: res.embedding[[i, 1]],
            label: f.label_names[i].clone(),
            channel: f.channel.clone(),
        })
        .collect();
    write_embedding_csv(out.join("tsne.csv"), &points)?;
    write_embedding_svg(out.join("tsne.svg"), &points)?;
    write_trace_csv(out.join("tsne_trace.csv"), &res.kl_trace)?;
    let sil = silhouette(res.embedding.view(), &f.labels).ok();
    if let Some(s) = sil {
        println!("silhouette {s:.4}");
    }
    #[derive(Serialize)]
    struct TsneReport<'a> {
        perplexity: f64,
        final_kl: Option<f64>,
        silhouette: Option<f64>,
        config: &'a TsneConfig,
    }
    write_json(
        &out.join("tsne_report.json"),
        &TsneReport {
            perplexity: res.perplexity,
            final_kl: res.kl_trace.last().copied(),
            silhouette: sil,
            config: &res.config,
        },
    )
}

fn run_pipeline_cmd(cli: &Cli, a: &PipelineArgs) -> Result<()> {
    let mut c = layered(PipelineConfig::default(), a.config.as_deref())?;
    if let Some(v) = a.seed {
        c.experiment.seed = v;
    }
    if let Some(v) = a.max_iterations {
        c.experiment.cvae.max_iterations = v;
    }
    c.output_dir = output_dir(&cli.out, Some(&c.output_dir));
    c.experiment.validate()?;
    start("pipeline", cli, &c.output_dir, &c)?;
    pipeline::run_pipeline(&c)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Extract(a) => run_extract(cli, a),
        Command::Classify(a) => run_classify(cli, a),
        Command::Curve(a) => run_curve(cli, a),
        Command::Transfer(a) => run_transfer_cmd(cli, a),
        Command::Rsa(a) => run_rsa_cmd(cli, a),
        Command::Tsne(a) => run_tsne_cmd(cli, a),
        Command::Pipeline(a) => run_pipeline_cmd(cli, a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn cli_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
