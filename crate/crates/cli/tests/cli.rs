use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn oct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oct-triage"))
        .args(args)
        .env_remove("OCT_TRIAGE_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen(dir: &Path, seed: &str) {
    let out = oct(&[
        "gen-phantoms", "--out", p(dir), "--per-class", "4", "--bscans", "4", "--size", "32x32",
        "--ungradable-frac", "0.25", "--seed", seed,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

fn train_all(manifest: &Path, models: &Path) {
    for task in ["anomaly", "dry", "wet", "dme", "quality"] {
        let out = oct(&[
            "train", "--manifest", p(manifest), "--task", task, "--epochs", "2", "--patience", "1",
            "--input-size", "16x16", "--val-frac", "0.5", "--out", p(&models.join(format!("{task}.poct"))), "--seed", "7",
        ]);
        assert!(out.status.success(), "{task}: {}", stderr(&out));
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(oct(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(oct(&["infer", "--manifest", "m.json"]).status.code(), Some(1));
    let out = oct(&["evaluate", "--preds", "p", "--manifest", "m", "--threshold", "1.5", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("threshold"));
    let out = oct(&["infer", "--manifest", "m", "--models", "d", "--agg", "topk:0", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(oct(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = oct(&["evaluate", "--preds", "x", "--manifest", p(&missing), "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));

    let data = dir.path().join("data");
    gen(&data, "7");
    let manifest = data.join("manifest.json");
    let out = oct(&["infer", "--manifest", p(&manifest), "--models", p(&dir.path().join("models")), "--out", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("anomaly.poct"), "{}", stderr(&out));

    // Quality training needs the generator sidecar.
    fs::remove_file(data.join("truth.json")).unwrap();
    let out = oct(&["train", "--manifest", p(&manifest), "--task", "quality", "--epochs", "2", "--patience", "1",
        "--input-size", "16x16", "--out", p(&dir.path().join("q.poct"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"dataset_id": "x", "scanner_id": "y", "label_granularity": "VOLUME", "entries": [{"volume_id": "a"}]}"#).unwrap();
    let out = oct(&["evaluate", "--preds", "x", "--manifest", p(&bad), "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("entries[0]"), "{}", stderr(&out));
}

#[test]
fn env_seed_is_the_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    gen(&a, "7");
    let b = dir.path().join("b");
    let out = Command::new(env!("CARGO_BIN_EXE_oct-triage"))
        .args(["gen-phantoms", "--out", p(&b), "--per-class", "4", "--bscans", "4", "--size", "32x32", "--ungradable-frac", "0.25"])
        .env("OCT_TRIAGE_SEED", "7")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("truth.json")).unwrap(), fs::read(b.join("truth.json")).unwrap());
}

#[test]
fn pipeline_round_trip_and_label_blind_inference() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data, "7");
    let manifest = data.join("manifest.json");
    let models = dir.path().join("models");
    train_all(&manifest, &models);

    let preds = dir.path().join("preds.jsonl");
    let out = oct(&["infer", "--manifest", p(&manifest), "--models", p(&models), "--agg", "mean", "--out", p(&preds)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 16);

    // Relabelling every volume must not change what inference writes.
    let text = fs::read_to_string(&manifest).unwrap();
    let relabelled = ["DRY_AMD", "WET_AMD", "DME"].iter().fold(text, |t, l| t.replace(l, "NORMAL"));
    let other = data.join("relabelled.json");
    fs::write(&other, relabelled).unwrap();
    let preds2 = dir.path().join("preds2.jsonl");
    let out = oct(&["infer", "--manifest", p(&other), "--models", p(&models), "--agg", "mean", "--out", p(&preds2)]);
    assert!(out.status.success());
    assert_eq!(fs::read(&preds).unwrap(), fs::read(&preds2).unwrap());

    let report = dir.path().join("report.json");
    let out = oct(&["evaluate", "--preds", p(&preds), "--manifest", p(&manifest), "--out", p(&report)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for format in ["md", "csv", "json"] {
        let out = oct(&["report", "--in", p(&report), "--format", format]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("phantom-clean-s7"), "{format}: {text}");
    }

    // Predictions that do not match the manifest are a data error.
    let half: String = fs::read_to_string(&preds).unwrap().lines().take(5).map(|l| format!("{l}\n")).collect();
    fs::write(&preds, half).unwrap();
    let out = oct(&["evaluate", "--preds", p(&preds), "--manifest", p(&manifest), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(2));
}
