use std::path::Path;
use std::process::{Command, Output};

fn spdtok(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdtok"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPDTOK_SEED")
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"{
  "model": {"d_model": 16, "layers": 1, "heads": 2, "d_ff": 16},
  "data": {"source": {"source": "synth", "n_classes": 2, "d": 3, "trials_per_class": 12,
                      "separation": 1.5, "dispersion": 0.05, "seed": 3}},
  "optimizer": {"epochs": 1, "batch_size": 8},
  "seeds": [42]
}"#;

#[test]
fn verify_filter_emits_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdtok(&["verify", "--filter", "vech"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 1);
    assert!(!spdtok(&["verify", "--filter", "bogus"], dir.path()).status.success());
}

#[test]
fn bench_counts_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdtok(&["bench", "--dims", "8,22", "--trials", "3"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("8,log,28,"), "{text}");
    assert!(text.contains("22,log,231,"), "{text}");
    assert!(!spdtok(&["bench", "--dims", "1"], dir.path()).status.success());
}

#[test]
fn one_epoch_one_seed_then_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    let out = spdtok(&["train", "--config", "tiny.json", "--out", "runs"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("runs/seed-42/epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus exactly one epoch row");

    let out = spdtok(&["report", "runs", "--out", "rep"], dir.path());
    assert!(out.status.success());
    let md = String::from_utf8(out.stdout).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Model")).count(), 1);
    assert!(dir.path().join("rep/curves.csv").exists());
    assert!(!spdtok(&["report", "missing"], dir.path()).status.success());
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spdtok"))
        .args(["train", "--config", "tiny.json", "--out", "runs"])
        .current_dir(dir.path())
        .env("SPDTOK_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("runs/seed-7/metrics.json").exists());
    assert!(!dir.path().join("runs/seed-42").exists());
}

#[test]
fn ablate_embedding_axis() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY.replace("[42]", "[1, 2]")).unwrap();
    let out = spdtok(&["ablate", "--config", "tiny.json", "--axis", "embedding", "--out", "abl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let variants: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, vec!["log_euclidean", "bwspd", "euclidean"]);
    assert!(dir.path().join("abl/ablation_embedding.json").exists());
    assert!(!spdtok(&["ablate", "--config", "tiny.json", "--axis", "width"], dir.path()).status.success());
}

#[test]
fn bad_config_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), TINY.replace("\"epochs\": 1", "\"epochs\": 0")).unwrap();
    let out = spdtok(&["train", "--config", "bad.json", "--out", "runs"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("runs").exists());
}
