use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dueso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dueso"))
        .args(args)
        .arg("--log-level=warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = dueso(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON summary")
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap_or_default();
    let v: Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("stderr not JSON: {line}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

const TINY: &str = r#"{
    "model": { "conv_filters": 2, "gru_layers": 1, "gru_hidden": 4, "readout_dim": 4, "fc_width": 8, "fc_layers": 1 },
    "train": { "epochs_max": 1, "batch_size": 8 },
    "synth": { "min_frames": 20, "max_frames": 30 }
}"#;

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_is_deterministic_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let v = ok(&["synth", "--out", s(&a), "--n", "3", "--seed", "5", "--config", &cfg]);
    assert_eq!(v["swallows"], 3);
    ok(&["synth", "--out", s(&b), "--n", "3", "--seed", "5", "--config", &cfg]);
    for name in ["manifest.json", "signals/syn0002.sig", "labels/syn0002.json", "baseline.sig"] {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        assert!(x.is_ok(), "missing {name}");
        assert_eq!(x.unwrap(), y.unwrap(), "{name} differs");
    }
    let label: Value = serde_json::from_slice(&fs::read(a.join("labels/syn0000.json")).unwrap()).unwrap();
    let n = label["n_frames"].as_u64().unwrap();
    assert!((20..=30).contains(&n), "config file ignored: {n} frames");
}

#[test]
fn train_emits_one_checkpoint_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (data, out) = (dir.path().join("data"), dir.path().join("run"));
    ok(&["synth", "--out", s(&data), "--n", "20", "--config", &cfg]);
    let v = ok(&["train", "--data", s(&data), "--out", s(&out), "--folds", "10", "--config", &cfg]);
    assert_eq!(v["checkpoints"].as_array().unwrap().len(), 10);
    for f in 0..10 {
        assert!(out.join(format!("fold{f:02}.ckpt")).is_file());
    }
    for name in ["report.json", "eval.txt", "summary.csv", "per_swallow.csv", "histogram.csv", "predictions.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let per: Vec<_> = fs::read_to_string(out.join("per_swallow.csv")).unwrap().lines().map(String::from).collect();
    assert_eq!(per.len(), 21);
}

#[test]
fn preprocess_train_predict_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let d = dir.path();
    let (raw, pre, run) = (d.join("raw"), d.join("pre"), d.join("run"));
    ok(&["synth", "--out", s(&raw), "--n", "6", "--config", &cfg]);
    ok(&["preprocess", "--in", s(&raw), "--out", s(&pre), "--config", &cfg]);
    assert!(pre.join("preprocessing.json").is_file());
    ok(&["train", "--data", s(&pre), "--out", s(&run), "--folds", "2", "--seed", "1", "--config", &cfg]);

    let ckpt = run.join("fold00.ckpt");
    let pred = d.join("pred.json");
    ok(&["predict", "--checkpoint", s(&ckpt), "--in", s(&pre), "--out", s(&pred)]);
    let p: Value = serde_json::from_slice(&fs::read(&pred).unwrap()).unwrap();
    assert_eq!(p["predictions"].as_array().unwrap().len(), 6);

    // the checkpoint carries the noise models, so raw input gives the same masks
    let pred_raw = d.join("pred_raw.json");
    ok(&["predict", "--checkpoint", s(&ckpt), "--in", s(&raw), "--out", s(&pred_raw)]);
    let q: Value = serde_json::from_slice(&fs::read(&pred_raw).unwrap()).unwrap();
    assert_eq!(p["predictions"][0]["mask"], q["predictions"][0]["mask"]);

    let rep = d.join("rep");
    let v = ok(&["eval", "--pred", s(&pred), "--truth", s(&pre), "--report", s(&rep)]);
    assert_eq!(v["swallows"], 6);
    assert!(rep.join("summary.csv").is_file());
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["synth", "--out", s(&data), "--n", "4"]);
    let mut preds = Vec::new();
    for i in 0..4 {
        let l: Value = serde_json::from_slice(&fs::read(data.join(format!("labels/syn{i:04}.json"))).unwrap()).unwrap();
        let (n, o, c) = (l["n_frames"].as_u64().unwrap(), l["opening_frame"].as_u64().unwrap(), l["closure_frame"].as_u64().unwrap());
        let values: Vec<f64> = (0..90).map(|t| if (o..c).contains(&t) { 1.0 } else { 0.0 }).collect();
        let validity: Vec<bool> = (0..90).map(|t| t < n).collect();
        preds.push(serde_json::json!({
            "swallow_id": l["swallow_id"],
            "mask": { "values": values, "validity": validity, "n_frames": n },
            "events": { "opening_frame": o, "closure_frame": c },
        }));
    }
    let pred = d.join("pred.json");
    fs::write(&pred, serde_json::to_vec(&serde_json::json!({ "predictions": preds })).unwrap()).unwrap();
    let rep = d.join("rep");
    let v = ok(&["eval", "--pred", s(&pred), "--truth", s(&data), "--report", s(&rep)]);
    for k in ["accuracy_mean", "sensitivity_mean", "specificity_mean"] {
        assert_eq!(v[k], 1.0, "{k}");
    }
    let report: Value = serde_json::from_slice(&fs::read(rep.join("eval.json")).unwrap()).unwrap();
    for row in report["opening_tolerance"].as_array().unwrap() {
        assert_eq!(row["percent"], 100.0);
    }
}

#[test]
fn gradcheck_flags_a_corrupted_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let v = ok(&["gradcheck", "--samples", "5", "--config", &cfg]);
    assert_eq!(v["passed"], true);
    let out = dueso(&["gradcheck", "--samples", "5", "--corrupt", "gru0", "--config", &cfg]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "GradcheckFailed");
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("nope.ckpt");
    let out = dueso(&["predict", "--checkpoint", s(&missing), "--in", s(d), "--out", s(&d.join("p.json"))]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "IoError");

    let bad = d.join("bad.ckpt");
    fs::write(&bad, b"HRCK not really a checkpoint").unwrap();
    let out = dueso(&["predict", "--checkpoint", s(&bad), "--in", s(d), "--out", s(&d.join("p.json"))]);
    assert_eq!(error_kind(&out), "FormatError");

    let out = dueso(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "UsageError");

    let cfg = d.join("bad.json");
    fs::write(&cfg, r#"{ "model": { "gru_hiden": 3 } }"#).unwrap();
    let out = dueso(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(error_kind(&out), "FormatError");
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let d = dir.path();
    let data = d.join("data");
    ok(&["synth", "--out", s(&data), "--n", "4", "--config", &cfg]);
    for r in ["r1", "r2"] {
        ok(&["train", "--data", s(&data), "--out", s(&d.join(r)), "--folds", "2", "--seed", "9", "--config", &cfg]);
    }
    for f in ["fold00.ckpt", "fold01.ckpt", "report.json", "per_swallow.csv"] {
        assert_eq!(fs::read(d.join("r1").join(f)).unwrap(), fs::read(d.join("r2").join(f)).unwrap(), "{f}");
    }
}
