//! End-to-end recipe through the real binary on the micro config:
//! gen-data -> pretrain -> train-igc -> eval, plus token analysis, gate
//! report and the no-op rerun rule. Minutes-scale.

use std::path::{Path, PathBuf};
use std::process::Command;

fn igc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_igc"))
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/micro.toml")
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn");
    let text = format!(
        "{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.status.success(), "command failed:\n{text}");
    text
}

#[test]
fn full_recipe_micro() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let base = root.join("base");
    let run = root.join("run");
    let evald = root.join("eval");

    run_ok(igc()
        .arg("gen-data")
        .arg("--config").arg(config())
        .arg("--out").arg(&data));
    assert!(data.join("dataset.jsonl").exists());
    assert!(data.join("pretrain.jsonl").exists());
    assert!(data.join("vocab.json").exists());
    assert!(data.join("config.toml").exists(), "resolved config stamped");
    assert!(data.join("manifest.json").exists(), "artifact manifest stamped");

    // rerunning a completed stage is a no-op unless forced
    let text = run_ok(igc()
        .arg("gen-data")
        .arg("--config").arg(config())
        .arg("--out").arg(&data));
    assert!(text.contains("current"), "expected the no-op notice, got:\n{text}");

    run_ok(igc()
        .arg("pretrain")
        .arg("--config").arg(config())
        .arg("--data").arg(&data)
        .arg("--out").arg(&base));
    assert!(base.join("checkpoint/params.bin").exists());

    run_ok(igc()
        .arg("train-igc")
        .arg("--config").arg(config())
        .arg("--data").arg(&data)
        .arg("--base").arg(&base)
        .arg("--out").arg(&run)
        .arg("--seed").arg("0"));
    let seed_dir = run.join("seed0");
    assert!(seed_dir.join("checkpoint/params.bin").exists());
    assert!(seed_dir.join("metrics.csv").exists());
    let metrics = std::fs::read_to_string(seed_dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() > 2, "metrics rows present:\n{metrics}");
    assert!(metrics.starts_with("epoch,split,acc_add"));

    let text = run_ok(igc()
        .arg("eval")
        .arg("--config").arg(config())
        .arg("--data").arg(&data)
        .arg("--model").arg(&seed_dir)
        .arg("--out").arg(&evald)
        .arg("--calc-log").arg(root.join("calc.jsonl")));
    assert!(evald.join("metrics.csv").exists());
    assert!(text.contains("overall"), "eval prints accuracy:\n{text}");
    let calc_log = std::fs::read_to_string(root.join("calc.jsonl")).unwrap();
    assert!(calc_log.lines().count() > 10, "calculator log lines written");
    let first: serde_json::Value = serde_json::from_str(calc_log.lines().next().unwrap()).unwrap();
    assert!(first.get("a").is_some() && first.get("op").is_some() && first.get("result").is_some());

    run_ok(igc()
        .arg("analyze-tokens")
        .arg("--data").arg(&data)
        .arg("--out").arg(root.join("tokens")));
    assert!(root.join("tokens/chunking_report.json").exists());
    let table = std::fs::read_to_string(root.join("tokens/chunking_report.txt")).unwrap();
    assert!(table.contains("position-stable: true"), "{table}");

    run_ok(igc()
        .arg("gate-report")
        .arg("--config").arg(config())
        .arg("--data").arg(&data)
        .arg("--model").arg(&seed_dir)
        .arg("--out").arg(root.join("gates.jsonl")));
    let gates = std::fs::read_to_string(root.join("gates.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(gates.lines().next().unwrap()).unwrap();
    assert!(line.get("gates").unwrap().as_array().unwrap().len() > 0);
}

#[test]
fn missing_prerequisite_names_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = igc()
        .arg("train-igc")
        .arg("--config").arg(config())
        .arg("--data").arg(tmp.path())
        .arg("--base").arg(tmp.path().join("nope"))
        .arg("--out").arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gen-data"), "actionable message, got:\n{err}");
}

#[test]
fn usage_error_exits_two() {
    let out = igc().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nwidth = 0\n").unwrap();
    let out = igc()
        .arg("gen-data")
        .arg("--config").arg(&bad)
        .arg("--out").arg(tmp.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model dimensions"), "{err}");
}
