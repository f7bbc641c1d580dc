use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pcreid(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcreid"))
        .args(args)
        .env("PCREID_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pcreid")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "scenario": {
            "identities": 3, "sequences_per_identity": 6, "min_frames": 10, "max_frames": 10,
            "gallery_per_identity": 2, "probe_per_identity": 2, "density": 400.0, "seed": 3
        },
        "train": { "p": 3, "k": 2, "iterations": 3, "min_frames": 4, "max_frames": 6 },
        "eval": { "gallery_n": 2 }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pcreid(&["eval", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_reports_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pcreid(&["track", "--stream", "/nonexistent/stream.jsonl", "--mode", "naive"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let hash = |dir: &str| {
        let run = tmp.path().join(dir);
        let out = pcreid(&["synth", "--config", cfg, "--run-dir", run.to_str().unwrap()], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let s = stdout(&out);
        s.rsplit("hash ").next().unwrap().trim().to_string()
    };
    let a = hash("a");
    let b = hash("b");
    assert_eq!(a.len(), 64);
    assert_eq!(a, b);
    let run: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("a/run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "synth");
    assert_eq!(run["config"]["scenario"]["identities"], 3);
    assert!(run["git"].is_string());
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let data = tmp.path().join("data");
    let out = pcreid(&["synth", "--config", cfg, "--run-dir", data.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("dataset/manifest.json");
    let manifest = manifest.to_str().unwrap();

    let train = tmp.path().join("train");
    let out = pcreid(
        &["train", "--config", cfg, "--run-dir", train.to_str().unwrap(), "--dataset", manifest, "--iterations", "2"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = train.join("checkpoint.json");
    assert!(ckpt.exists());
    let run: Value = serde_json::from_slice(&std::fs::read(train.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["train"]["iterations"], 2);

    let out = pcreid(
        &[
            "eval", "--config", cfg, "--dataset", manifest, "--checkpoint", ckpt.to_str().unwrap(),
            "--mode", "nn", "--gallery-n", "1",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("eval-"))
        .collect();
    assert_eq!(runs.len(), 1);
    let report: Value = serde_json::from_slice(&std::fs::read(runs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["probes"], 6);
    assert!(runs[0].join("records.csv").exists());
}

#[test]
fn crossing_track_and_imprint() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    let out = pcreid(&["synth", "--crossing", "--run-dir", synth.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = synth.join("crossing");
    let track = tmp.path().join("track");
    let out = pcreid(
        &[
            "track", "--mode", "naive", "--run-dir", track.to_str().unwrap(),
            "--stream", dir.join("stream.jsonl").to_str().unwrap(),
            "--truth", dir.join("truth.jsonl").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("accuracy"));
    let img = tmp.path().join("img");
    let out = pcreid(
        &[
            "imprint", "--run-dir", img.to_str().unwrap(),
            "--stream", dir.join("stream.jsonl").to_str().unwrap(),
            "--labels", track.join("labeled.jsonl").to_str().unwrap(),
            "--scene", dir.join("scene.json").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ppm = std::fs::read(img.join("imprint.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n"));
    assert!(img.join("imprint.json").exists());
}
