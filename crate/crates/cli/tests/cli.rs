//! End-to-end exercises of the binary: exit codes, file outputs and
//! reproducibility at desk scale.

use std::fs;
use std::path::Path;
use std::process::Command;

fn parfan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parfan"))
}

fn desk_config_json(out_dir: &Path) -> String {
    format!(
        r#"{{
  "geometry": {{
    "detector_px": 16,
    "image_px": 12,
    "trajectory_deg": [0.0, 30.0],
    "n_projections": 3
  }},
  "training": {{ "epochs_scale": 30, "epochs_filter": 2, "smoothing_sigma_bins": 1.0 }},
  "output_dir": "{}"
}}"#,
        out_dir.display()
    )
}

#[test]
fn full_pipeline_runs_and_produces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, desk_config_json(dir.path())).unwrap();

    let status = parfan()
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("dataset/manifest.json").exists());

    let status = parfan()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(status.success());
    let ckpt = dir.path().join("train/checkpoint");
    assert!(ckpt.with_extension("json").exists());
    assert!(dir.path().join("train/report.json").exists());
    assert!(dir.path().join("train/loss.csv").exists());
    assert!(dir.path().join("train/timing.json").exists());

    let status = parfan()
        .args(["evaluate", "--config"])
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("eval/metrics.json").exists());
    assert!(dir.path().join("eval/profile_b0.csv").exists());
    assert!(dir.path().join("eval/profile_b30.csv").exists());

    let status = parfan()
        .args(["rebin-baseline", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("baseline/baseline_metrics.json").exists());

    let filter_csv = dir.path().join("filter.csv");
    let status = parfan()
        .args(["export-filter", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&filter_csv)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&filter_csv).unwrap();
    assert_eq!(text.lines().count(), 3); // one line per wedge projection
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, r#"{ "geometry": { "trajectory": [0] } }"#).unwrap();
    let output = parfan()
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!output.stderr.is_empty());
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, desk_config_json(dir.path())).unwrap();
    let output = parfan()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--dataset")
        .arg(dir.path().join("nope"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn geometry_mismatch_on_evaluate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, desk_config_json(dir.path())).unwrap();
    assert!(parfan()
        .args(["generate", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap()
        .success());
    assert!(parfan()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap()
        .success());
    let output = parfan()
        .args(["evaluate", "--config"])
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(dir.path().join("train/checkpoint"))
        .args(["--n-projections", "5"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn flag_overrides_take_effect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let status = parfan()
        .args([
            "generate",
            "--detector-px",
            "16",
            "--image-px",
            "12",
            "--trajectory-deg",
            "0,45",
            "--n-projections",
            "3",
            "--seed",
            "5",
        ])
        .arg("--out")
        .arg(&out)
        .args(["--output-dir"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["phantom_seed"], 5);
    assert_eq!(manifest["geometry"]["detector_px"], 16);
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 130);
}

#[test]
fn identical_runs_produce_identical_artifacts() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let cfg_path = d.path().join("config.json");
        fs::write(&cfg_path, desk_config_json(d.path())).unwrap();
        assert!(parfan()
            .args(["generate", "--config"])
            .arg(&cfg_path)
            .status()
            .unwrap()
            .success());
        assert!(parfan()
            .args(["train", "--config"])
            .arg(&cfg_path)
            .status()
            .unwrap()
            .success());
    }
    for file in [
        "dataset/manifest.json",
        "train/checkpoint.bin",
        "train/checkpoint.json",
        "train/report.json",
        "train/loss.csv",
    ] {
        let a = fs::read(d1.path().join(file)).unwrap();
        let b = fs::read(d2.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}
