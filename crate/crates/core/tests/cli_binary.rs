//! The installed binary end to end: synth, train, extract, classify and a
//! reduced pipeline, with exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contrast3d"))
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).env_remove("CONTRAST3D_OUT").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).0, 1);
    assert_eq!(run(&["classify"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn synth_train_extract_classify_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let (code, log) = run(&[
        "synth", "--out", p(&data), "--side", "8", "--n-positive", "6", "--n-control", "6", "--seed", "4",
    ]);
    assert_eq!(code, 0, "{log}");
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let cfg = dir.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{"cvae": {"conv_filters": [2, 4], "fc_hidden": 8, "decoder_hidden": 8,
            "decoder_channels": 4, "deconv_filters": [4, 2, 1], "latent_dim": 4}}"#,
    )
    .unwrap();
    let model = dir.path().join("model");
    let (code, log) = run(&[
        "train", "--config", p(&cfg), "--out", p(&model), "--dataset", p(&manifest), "--side", "8",
        "--max-iterations", "15", "--batch-size", "2",
    ]);
    assert_eq!(code, 0, "{log}");

    let feats = dir.path().join("feats");
    let (code, log) = run(&[
        "extract", "--out", p(&feats), "--checkpoint", p(&model.join("model.json")), "--dataset", p(&manifest),
    ]);
    assert_eq!(code, 0, "{log}");

    let cls = dir.path().join("cls");
    let features = feats.join("features.csv");
    let args = ["classify", "--out", p(&cls), "--features", p(&features), "--k", "2,3", "--trees", "10"];
    let (code, log) = run(&args);
    assert_eq!(code, 0, "{log}");
    let first = std::fs::read(cls.join("cv.csv")).unwrap();
    assert_eq!(run(&args).0, 0);
    assert_eq!(first, std::fs::read(cls.join("cv.csv")).unwrap());
}

#[test]
fn missing_input_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run(&["classify", "--out", p(dir.path()), "--features", p(&dir.path().join("absent.csv"))]);
    assert_eq!(code, 2);
}
