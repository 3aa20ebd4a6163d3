use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "environment": {"width": 7, "height": 7},
  "train_tasks": 2,
  "test_tasks": 1,
  "demos": {"episodes": 200, "max_len": 60, "agent": {"max_steps": 300}},
  "learner": {"epochs": 3, "max_options": 1, "hidden": 4, "baseline": "neg_infinity"},
  "evaluation": {"episodes": 5, "seeds": 1, "agent": {"max_steps": 300}}
}"#;

fn optlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optlearn"))
        .args(args)
        .env_remove("OPTLEARN_WORKERS")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn pipeline_writes_artifacts_and_reruns_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_arg = out.to_str().unwrap();
    let first = optlearn(&["pipeline", "--config", &config, "--out", out_arg, "--seed", "4"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("primitives") && stdout.contains("random_init"), "{stdout}");

    let manifest: serde_json::Value = serde_json::from_slice(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 4);
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 5);
    let outputs: Vec<String> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["outputs"].as_array().unwrap().iter().map(|o| o.as_str().unwrap().to_string()))
        .collect();
    let before: Vec<Vec<u8>> = outputs.iter().map(|o| read(&out.join(o))).collect();

    let second = optlearn(&["pipeline", "--config", &config, "--out", out_arg, "--seed", "4"]);
    assert!(second.status.success());
    let after: Vec<Vec<u8>> = outputs.iter().map(|o| read(&out.join(o))).collect();
    assert_eq!(before, after);

    let other_seed = optlearn(&["pipeline", "--config", &config, "--out", out_arg, "--seed", "5"]);
    assert!(!other_seed.status.success());
    assert!(String::from_utf8_lossy(&other_seed.stderr).contains("different configuration"));
}

#[test]
fn learn_stops_after_option_learning() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("run");
    let status = optlearn(&["learn", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(status.status.success());
    assert!(out.join("options.json").is_file());
    assert!(out.join("learner_epochs.jsonl").is_file());
    assert!(!out.join("curves.csv").exists());

    let status = optlearn(&["pipeline", "--config", &config, "--out", out.to_str().unwrap(), "--stage", "tasks"]);
    assert!(status.status.success());
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert!(!optlearn(&["pipeline", "--config", &config]).status.success());
    assert!(!optlearn(&["pipeline", "--config", &config, "--out", out, "--stage", "train"]).status.success());
    assert!(!optlearn(&["pipeline", "--config", "/nonexistent/config.json", "--out", out]).status.success());
    assert!(!optlearn(&["frobnicate"]).status.success());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"test_tasks": 0}"#).unwrap();
    assert!(!optlearn(&["pipeline", "--config", bad.to_str().unwrap(), "--out", out]).status.success());

    let few_trials = dir.path().join("validate.json");
    std::fs::write(&few_trials, r#"{"trials": 10}"#).unwrap();
    assert!(!optlearn(&["validate", "--config", few_trials.to_str().unwrap()]).status.success());

    let zero_workers = Command::new(env!("CARGO_BIN_EXE_optlearn"))
        .args(["gradcheck"])
        .env("OPTLEARN_WORKERS", "0")
        .output()
        .unwrap();
    assert!(!zero_workers.status.success());
}

#[test]
fn gradcheck_reports_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gradcheck.json");
    std::fs::write(&config, r#"{"instances": 2, "hidden": 3}"#).unwrap();
    let run = |name: &str| {
        let report = dir.path().join(name);
        let output = Command::new(env!("CARGO_BIN_EXE_optlearn"))
            .args(["gradcheck", "--config", config.to_str().unwrap(), "--seed", "3", "--out", report.to_str().unwrap()])
            .env("OPTLEARN_WORKERS", "2")
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stdout));
        read(&report)
    };
    let first = run("a.json");
    assert_eq!(first, run("b.json"));
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
}
