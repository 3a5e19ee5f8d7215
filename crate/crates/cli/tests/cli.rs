use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "geometry": {"n_s": 8, "n_r": 4},
  "dataset": {"scenarios": 20},
  "model": {"branch_hidden": [16, 16], "trunk_hidden": [16, 8]},
  "train": {"epochs": 4, "batch_size": 8},
  "search": {"trials": 2, "folds": 2, "space": {"neurons": [8, 16]}},
  "eval": {"timing_repetitions": 10, "timing_warmup": 3}
}"#;

fn hotleg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotleg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("HOTLEG_OUT_DIR")
        .args(["--config", "tiny.json"])
        .args(args)
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn pipeline_end_to_end() {
    let ws = workspace();
    let d = ws.path();
    let gen = stdout_json(&hotleg(d, &["gen-data", "--out", "data"]));
    assert_eq!(gen["n_points"], 32);
    assert_eq!(gen["n_scenarios"], 20);
    assert!(d.join("data/manifest.json").exists());
    assert!(d.join("data/effective_config.json").exists());

    let tr = stdout_json(&hotleg(d, &["train", "--data", "data", "--out", "run"]));
    assert_eq!(tr["epochs"], 4);
    for f in ["checkpoint/model.json", "checkpoint/weights.f32le", "history.json", "report.json", "run.json", "effective_config.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let run: Value = serde_json::from_slice(&std::fs::read(d.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(run["dataset_sha256"], gen["content_sha256"]);
    assert_eq!(run["effective_config"]["train"]["epochs"], 4);
    assert!(run["versions"]["hotleg"].is_string());

    let ev = stdout_json(&hotleg(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "data", "--out", "eval"]));
    assert_eq!(ev["untouched_verified"], true);
    assert_eq!(ev["report"]["n_scenarios"], 4);
    assert_eq!(ev["report"]["space"], "scaled");
    // eval on the checkpoint reproduces the report written at training time
    let at_train: Value = serde_json::from_slice(&std::fs::read(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(ev["report"], at_train);
    assert!(d.join("eval/per_scenario.csv").exists());
    assert!(d.join("eval/fields/P_best_scenario").parent().unwrap().read_dir().unwrap().count() >= 2);

    // evaluating every scenario of the training dataset is refused
    let o = hotleg(d, &["eval", "--checkpoint", "run/checkpoint", "--data", "data", "--all", "--out", "eval2"]);
    assert_eq!(o.status.code(), Some(2));

    let inf = stdout_json(&hotleg(d, &["infer", "--checkpoint", "run/checkpoint", "--v-in", "0.7"]));
    assert_eq!(inf["P"].as_array().unwrap().len(), 32);
    assert_eq!(inf["space"], "physical");
    assert_eq!(inf["parameter_order"], serde_json::json!(["P", "V_o", "k"]));
    let header: Value = serde_json::from_slice(&std::fs::read(d.join("run/checkpoint/model.json")).unwrap()).unwrap();
    assert_eq!(inf["model_checksum"], header["blob_sha256"]);

    let b = stdout_json(&hotleg(d, &["bench", "--checkpoint", "run/checkpoint", "--out", "bench"]));
    assert!(b["median_s"].as_f64().unwrap() > 0.0);
    let t: Value = serde_json::from_slice(&std::fs::read(d.join("bench/timing.json")).unwrap()).unwrap();
    assert_eq!(t["times_s"].as_array().unwrap().len(), 10);

    let cv = stdout_json(&hotleg(d, &["cv", "--data", "data", "--out", "cv", "--epochs", "2"]));
    assert_eq!(cv["fold_losses"].as_array().unwrap().len(), 2);

    let tune = stdout_json(&hotleg(d, &["tune", "--data", "data", "--out", "tune", "--epochs", "2"]));
    assert_eq!(tune["trials"], 2);
    let log = std::fs::read_to_string(d.join("tune/trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn sweeps_emit_table_shaped_reports() {
    let ws = workspace();
    let d = ws.path();
    stdout_json(&hotleg(d, &["gen-data", "--out", "data"]));
    let ab = stdout_json(&hotleg(d, &["ablate", "--data", "data", "--out", "ab", "--epochs", "2"]));
    assert_eq!(ab["heads_better"].as_array().unwrap().len(), 3);
    let (h, v) = (ab["heads_params"].as_f64().unwrap(), ab["vanilla_params"].as_f64().unwrap());
    assert!((h / v - 1.0).abs() < 0.05, "{h} vs {v}");
    let table = std::fs::read_to_string(d.join("ab/ablation.txt")).unwrap();
    assert_eq!(table.lines().filter(|l| l.starts_with("vanilla") || l.starts_with("heads")).count(), 6);

    let rb = stdout_json(&hotleg(d, &["robustness", "--data", "data", "--out", "rb", "--splits", "0.7,0.8,0.9", "--epochs", "2"]));
    assert_eq!(rb["cells"], 4);
    let tables = std::fs::read_to_string(d.join("rb/robustness.txt")).unwrap();
    for row in ["70-30", "80-20", "90-10", "32", "8"] {
        assert!(tables.lines().any(|l| l.starts_with(row)), "{row} missing:\n{tables}");
    }
}

#[test]
fn exit_codes_and_json_errors() {
    let ws = workspace();
    let d = ws.path();
    let o = hotleg(d, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_error(&o)["error"]["kind"], "usage");

    let o = hotleg(d, &["train", "--data", "missing", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["exit_code"], 2);

    std::fs::write(d.join("bad.json"), r#"{"train": {"epochz": 1}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hotleg"))
        .current_dir(d)
        .args(["--config", "bad.json", "gen-data", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["kind"], "config");

    // a learning rate this large blows the loss up within a few steps
    std::fs::write(
        d.join("diverge.json"),
        r#"{"geometry": {"n_s": 8, "n_r": 4}, "dataset": {"scenarios": 20},
            "model": {"branch_hidden": [16], "trunk_hidden": [16]},
            "train": {"epochs": 50, "batch_size": 4, "learning_rate": 1e300}}"#,
    )
    .unwrap();
    stdout_json(&hotleg(d, &["gen-data", "--out", "data"]));
    let o = Command::new(env!("CARGO_BIN_EXE_hotleg"))
        .current_dir(d)
        .args(["--config", "diverge.json", "train", "--data", "data", "--out", "dv"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_error(&o)["error"]["kind"], "divergence");
}

#[test]
fn out_dir_env_override() {
    let ws = workspace();
    let d = ws.path();
    let o = Command::new(env!("CARGO_BIN_EXE_hotleg"))
        .current_dir(d)
        .env("HOTLEG_OUT_DIR", d.join("elsewhere"))
        .args(["--config", "tiny.json", "gen-data", "--scenarios", "5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.join("elsewhere/gen-data/manifest.json").exists());
}
