use std::path::Path;
use std::process::{Command, Output};

fn posemine(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posemine"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = posemine(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(posemine(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(posemine(&["embed", "--records", "r.jsonl"], dir.path()).status.code(), Some(2));
    assert_eq!(posemine(&["train", "--dir", ".", "--weights", "maybe"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = posemine(&["fit-pca", "--records", "absent.jsonl", "--out", "pca.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

const TRAIN_CONFIG: &str = r#"
[train]
pairs_per_batch = 4
steps = 3

[train.encoder]
input = 64
hidden = [8]
feature = 6
projection = 4
"#;

#[test]
fn stage_by_stage_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--videos", "6", "--frames", "10", "--image-size", "8", "--seed", "4", "--out-dir", "."], d);
    ok(
        &[
            "ingest",
            "--input",
            "records.jsonl",
            "--out",
            "balanced.jsonl",
            "--images",
            "images.simg",
            "--images-out",
            "balanced.simg",
        ],
        d,
    );
    ok(&["fit-pca", "--records", "balanced.jsonl", "--out", "pca.json"], d);
    ok(&["embed", "--records", "balanced.jsonl", "--pca", "pca.json", "--out", "embeddings.simh"], d);
    ok(&["mine", "--embeddings", "embeddings.simh", "--out", "pairs.jsonl"], d);
    assert_eq!(std::fs::read_to_string(d.join("pairs.jsonl")).unwrap().lines().count(), 60);

    let top = ok(&["topk", "--embeddings", "embeddings.simh", "--query", "vid0002:3"], d);
    let rows: Vec<serde_json::Value> = top.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
        assert_ne!(r["pos_video_id"], "vid0002");
    }
    let dist: Vec<f64> = rows.iter().map(|r| r["distance"].as_f64().unwrap()).collect();
    assert!(dist.windows(2).all(|w| w[0] <= w[1]));

    ok(
        &["mine", "--embeddings", "embeddings.simh", "--out", "q.jsonl", "--topk", "5", "--query", "vid0002:3"],
        d,
    );
    let saved: Vec<serde_json::Value> = std::fs::read_to_string(d.join("q.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(saved, rows);

    std::fs::write(d.join("train.toml"), TRAIN_CONFIG).unwrap();
    ok(&["train", "--config", "train.toml", "--dir", ".", "--weights", "off"], d);
    let log = std::fs::read_to_string(d.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(d.join("model.json").exists());

    let same = ok(&["eval", "--pred", "poses3d.jsonl", "--gt", "poses3d.jsonl"], d);
    let report: serde_json::Value = serde_json::from_str(&same).unwrap();
    assert_eq!(report["mpjpe_mm"], 0.0);
    assert_eq!(report["pck_auc"], 1.0);

    ok(
        &[
            "eval",
            "--pairs",
            "pairs.jsonl",
            "--records",
            "balanced.jsonl",
            "--embeddings",
            "embeddings.simh",
            "--out",
            "quality.json",
        ],
        d,
    );
    let quality: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("quality.json")).unwrap()).unwrap();
    assert!(quality["ratio"].as_f64().unwrap() < 1.0);
}
