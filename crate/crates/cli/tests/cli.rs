use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_indirectml"))
        .args(args)
        .current_dir(cwd)
        .env("INDIRECTML_CACHE", cwd.join("cache"))
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(transition: Value) -> Value {
    json!({
        "name": "small",
        "seed": 3,
        "data": {
            "kind": "synthetic",
            "mixture": { "means": [[0.0, 2.0], [-2.0, -1.0], [2.0, -1.0]] },
            "n_train": 1000,
            "n_test": 1000,
            "sources": [{ "name": "weak", "transition": transition }]
        },
        "model": { "kind": "linear" },
        "optimizer": { "kind": "gd", "learning_rate": 0.1, "epochs": 50, "batch_size": 0 }
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn ccn() -> Value {
    json!({ "kind": "ccn", "rate": 0.2 })
}

#[test]
fn overlapping_partition_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(json!({ "kind": "coarse_partition", "groups": [[0, 1], [1, 2]] }));
    let path = write_config(dir.path(), "bad.json", &cfg);
    let out = run(&["train", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.sources[0].transition.groups"), "{}", stderr(&out));
}

#[test]
fn unknown_field_and_bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(ccn());
    cfg["optimizer"]["learning_rat"] = json!(0.1);
    let path = write_config(dir.path(), "typo.json", &cfg);
    let out = run(&["train", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));

    let mut cfg = small_config(ccn());
    cfg["data"]["sources"][0]["name"] = json!("train");
    let path = write_config(dir.path(), "reserved.json", &cfg);
    let out = run(&["generate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("data.sources[0].name"), "{}", stderr(&out));

    let out = run(&["train", "--config", "missing.json"], dir.path());
    assert_ne!(out.status.code(), Some(0));
    let out = run(&["reproduce", "no-such-preset"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_writes_csvs_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", &small_config(ccn()));
    let run_dir = dir.path().join("run");
    let out = run(&["generate", "--config", path.to_str().unwrap(), "--out", run_dir.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["train.csv", "test.csv", "weak.csv"] {
        let text = std::fs::read_to_string(run_dir.join("data").join(file)).unwrap();
        assert_eq!(text.lines().count(), 1001, "{file}: header plus 1000 rows");
    }
    let sidecar: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("data/weak.json")).unwrap()).unwrap();
    assert_eq!(sidecar["name"], "weak");
}

#[test]
fn train_eval_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", &small_config(ccn()));
    let run_dir = dir.path().join("run");
    let (cfg, out_dir) = (path.to_str().unwrap(), run_dir.to_str().unwrap());

    let out = run(&["train", "--config", cfg, "--out", out_dir], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for file in ["checkpoint.json", "loss_curve.csv", "metrics.json", "manifest.json"] {
        assert!(run_dir.join(file).exists(), "{file}");
    }
    let metrics: Value = serde_json::from_slice(&std::fs::read(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["schema"], "indirectml.metrics/v1");
    assert_eq!(metrics["identifiable"], true);
    assert_eq!(std::fs::read_to_string(run_dir.join("loss_curve.csv")).unwrap().lines().count(), 51);

    let out = run(&["eval", "--config", cfg, "--out", out_dir], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval["accuracy"], metrics["test_accuracy"]);

    let out = run(&["plot", "--out", out_dir], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = std::fs::read_to_string(run_dir.join("decision.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("prediction"));
    assert!(run_dir.join("loss.svg").exists());
}

#[test]
fn coarse_only_training_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(json!({ "kind": "coarse_partition", "groups": [[0, 1], [2]] }));
    let path = write_config(dir.path(), "coarse.json", &cfg);
    let run_dir = dir.path().join("run");
    let out = run(&["train", "--config", path.to_str().unwrap(), "--out", run_dir.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning:"), "{}", stderr(&out));
    let metrics: Value = serde_json::from_slice(&std::fs::read(run_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["identifiable"], false);
    assert!(!metrics["warnings"].as_array().unwrap().is_empty());

    let out = run(&["identify", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn fisher_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let out = run(&["fisher", "--config", configs.join("fisher-coarse.json").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stdout).contains("inf"));

    let report = dir.path().join("fisher.json");
    let out = run(
        &[
            "fisher",
            "--config",
            configs.join("fisher-complementary10.json").to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(report.exists());
}

#[test]
fn plot_refuses_high_dimension_but_writes_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(ccn());
    cfg["data"]["mixture"]["means"] = json!([[0.0, 2.0, 0.0], [-2.0, -1.0, 1.0], [2.0, -1.0, -1.0]]);
    let path = write_config(dir.path(), "d3.json", &cfg);
    let run_dir = dir.path().join("run");
    let out = run(&["train", "--config", path.to_str().unwrap(), "--out", run_dir.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&["plot", "--run", run_dir.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("2"), "{}", stderr(&out));
    assert!(run_dir.join("loss.svg").exists());
    assert!(!run_dir.join("decision.svg").exists());
}

#[test]
fn plot_on_empty_directory_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["plot", "--out", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let msg = stderr(&out);
    assert!(msg.contains("checkpoint.json") && msg.contains("indirectml train"), "{msg}");
}

#[test]
fn eval_without_training_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", &small_config(ccn()));
    let out = run(
        &["eval", "--config", path.to_str().unwrap(), "--out", dir.path().join("nothing").to_str().unwrap()],
        dir.path(),
    );
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).starts_with("error:"));
}
