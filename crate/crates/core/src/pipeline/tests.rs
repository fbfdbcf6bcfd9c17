use super::*;
use crate::cvae::CvaeConfig;
use crate::dataio::{generate_phantoms, PhantomConfig};
use crate::embed2d::TsneConfig;

fn tiny_spec(out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        cvae: CvaeConfig {
            conv_filters: [2, 4],
            fc_hidden: 8,
            decoder_hidden: 8,
            decoder_channels: 4,
            deconv_filters: [4, 2, 1],
            latent_dim: 4,
            max_iterations: 20,
            batch_size: 2,
            ..CvaeConfig::desk(8)
        },
        forest: crate::classifier::ForestConfig {
            n_trees: 10,
            ..Default::default()
        },
        k_values: vec![2, 3],
        raw_side: 4,
        curve_sizes: vec![6, 12],
        curve_repeats: 3,
        curve_k: 2,
        transfer_sizes: vec![6],
        transfer_repeats: 2,
        without_transfer_max_iterations: 5,
        tsne: Some(TsneConfig {
            iterations: 60,
            exaggeration_iterations: 20,
            momentum_switch: 20,
            ..TsneConfig::default()
        }),
        seed: 3,
        output_dir: out.to_path_buf(),
        ..ExperimentSpec::default()
    }
}

fn cohort(n: usize, seed: u64) -> LabeledDataset {
    generate_phantoms(&PhantomConfig {
        n_positive: n,
        n_control: n,
        side: 8,
        seed,
        ..PhantomConfig::default()
    })
    .unwrap()
}

#[test]
fn direct_writes_everything_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let data = cohort(6, 1);
    let a = run_direct(&spec, &data).unwrap();
    assert_eq!(a.conditions.len(), 2);
    assert_eq!(a.condition("salient").unwrap().cv.len(), 2);
    assert_eq!(a.condition("shared").unwrap().dimension, 4);
    assert!(a.condition("salient").unwrap().silhouette.is_some());
    for f in ["report.json", "model.json", "model.bin", "model_trace.csv", "accuracy.csv", "cv_salient.csv", "features_shared.csv", "tsne_salient.svg", "tsne_shared_trace.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let before = std::fs::read(dir.path().join("report.json")).unwrap();
    let b = run_direct(&spec, &data).unwrap();
    assert_eq!(a, b);
    assert_eq!(before, std::fs::read(dir.path().join("report.json")).unwrap());
    assert_eq!(ExperimentReport::load(dir.path().join("report.json")).unwrap(), a);
}

#[test]
fn ablation_uses_flattened_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_ablation_raw(&tiny_spec(dir.path()), &cohort(6, 2)).unwrap();
    assert_eq!(r.condition("raw").unwrap().dimension, 64);
    assert_eq!(raw_features(&cohort(3, 2), 4).unwrap().dim(), (6, 64));
    assert!(r.training.is_empty());
}

#[test]
fn sample_curve_reports_every_size() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_sample_curve(&tiny_spec(dir.path()), &cohort(6, 3)).unwrap();
    let c = r.curve("salient").unwrap();
    assert_eq!(c.points.iter().map(|p| p.size).collect::<Vec<_>>(), vec![6, 12]);
    assert!(c.points.iter().all(|p| p.accuracies.len() == 3));
}

#[test]
fn transfer_keeps_source_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        kind: ExperimentKind::Transfer,
        ..tiny_spec(dir.path())
    };
    let r = run_transfer(&spec, &cohort(8, 4), &cohort(4, 5)).unwrap();
    let t = &r.training[0];
    assert_eq!(t.checksum_after_use.as_deref(), Some(t.params_checksum.as_str()));
    assert_eq!(t.stop_threshold, crate::cvae::TRANSFER_STOP_THRESHOLD);
    assert!(r.curve("with_transfer").is_some() && r.curve("without_transfer").is_some());
    let fig = std::fs::read_to_string(dir.path().join("transfer_curves.csv")).unwrap();
    assert!(fig.starts_with("size,with_mean,with_std,without_mean,without_std\n6,"));
}

#[test]
fn condition_features_pick_encoders_per_label() {
    let data = cohort(3, 6);
    let spec = tiny_spec(Path::new("unused"));
    let model = crate::cvae::CvaeModel::init(&spec.cvae, 1).unwrap();
    let sal = condition_features(&model, &data, Condition::Salient, FeatureMode::Mean, 0).unwrap();
    let sh = condition_features(&model, &data, Condition::Shared, FeatureMode::Mean, 0).unwrap();
    let bg = crate::cvae::extract_features(&model, &data, crate::cvae::Encoder::Background, FeatureMode::Mean, 0).unwrap();
    let s = crate::cvae::extract_features(&model, &data, crate::cvae::Encoder::Salient, FeatureMode::Mean, 0).unwrap();
    assert_eq!(sh.values, bg.values);
    for i in 0..data.len() {
        let expect = if i < 3 { s.values.row(i) } else { bg.values.row(i) };
        assert_eq!(sal.values.row(i), expect);
    }
    assert!(!sal.warnings.is_empty());
}

#[test]
fn spec_validation() {
    let mut s = ExperimentSpec::default();
    s.validate().unwrap();
    assert!(s.validate_paths().is_err());
    s.kind = ExperimentKind::Transfer;
    s.source = Some("a".into());
    assert!(s.validate_paths().is_err());
    s.target = Some("b".into());
    s.validate_paths().unwrap();
    s.k_values = vec![1];
    assert!(s.validate().unwrap_err().is_validation());
    let json = serde_json::to_string(&ExperimentSpec::default()).unwrap();
    assert_eq!(serde_json::from_str::<ExperimentSpec>(&json).unwrap(), ExperimentSpec::default());
    assert_eq!("ablation_raw".parse::<ExperimentKind>().unwrap(), ExperimentKind::AblationRaw);
}
