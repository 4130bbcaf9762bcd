use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gatedpose"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "maskgen", "train", "infer", "traj", "eval"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert_eq!(run(dir.path(), &["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["synth"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["eval", "--pred", "a", "--gt", "b", "--protocol", "3"]).status.code(), Some(1));
    let out = run(dir.path(), &["synth", "--out", "s.jsonl", "--theta", "0.5", "--occlusion-ratio", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eval", "--pred", "missing.jsonl", "--gt", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.jsonl"), "not json\n").unwrap();
    assert_eq!(run(dir.path(), &["eval", "--pred", "bad.jsonl", "--gt", "bad.jsonl"]).status.code(), Some(2));
    std::fs::write(dir.path().join("c.toml"), "[synth]\npeeple = 3\n").unwrap();
    let out = run(dir.path(), &["synth", "--config", "c.toml", "--out", "s.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    ok(dir.path(), &["synth", "--out", "s.jsonl", "--people", "1", "--frames", "30"]);
    let out = run(
        dir.path(),
        &["train", "--data", "s.jsonl", "--camera", "s.jsonl.camera.json", "--out", "m.ckpt", "--window", "30"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    for (out, seed) in [("a.jsonl", "7"), ("b.jsonl", "7"), ("c.jsonl", "8")] {
        ok(
            dir.path(),
            &["synth", "--out", out, "--seed", seed, "--people", "2", "--frames", "50", "--pixel-noise", "2", "--occlusion-ratio", "0.3"],
        );
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.jsonl.camera.json"), read("b.jsonl.camera.json"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "gt.jsonl", "--people", "2", "--frames", "40"]);
    let text = ok(dir.path(), &["eval", "--pred", "gt.jsonl", "--gt", "gt.jsonl", "--protocol", "1", "--out", "r.csv"]);
    assert!(text.contains("protocol 1: 0.0000 mm"), "{text}");
    let summary = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let avg = summary.lines().last().unwrap();
    let value: f64 = avg.rsplit(',').next().unwrap().parse().unwrap();
    assert!(avg.starts_with("Avg,") && value.abs() < 1e-9, "{avg}");
    let text = ok(dir.path(), &["eval", "--pred", "gt.jsonl", "--gt", "gt.jsonl", "--protocol", "2"]);
    assert!(text.contains("protocol 2: 0.0000 mm"), "{text}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[synth]\npeople = 3\nframes = 20\n").unwrap();
    ok(dir.path(), &["synth", "--config", "c.toml", "--out", "a.jsonl", "--frames", "25"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["config"]["people"], 3);
    assert_eq!(manifest["config"]["frames"], 25);
    assert_eq!(manifest["config"]["kernel-k"], 9);
    assert_eq!(manifest["seed"], 0);
    let lines = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1 + 3 * 25);
}

fn protocol_value(text: &str, protocol: u8) -> f64 {
    let prefix = format!("protocol {protocol}: ");
    let line = text.lines().find(|l| l.starts_with(&prefix)).unwrap();
    line[prefix.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn end_to_end_pipeline_on_a_small_scene() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config("tiny.toml");
    let cfg = cfg.to_str().unwrap();
    let start = Instant::now();
    ok(d, &["synth", "--config", cfg, "--out", "gt.jsonl", "--camera", "cam.json", "--seed", "3"]);
    ok(d, &["maskgen", "--config", cfg, "--input", "gt.jsonl", "--out", "masked.jsonl", "--seed", "4"]);
    ok(d, &["train", "--config", cfg, "--data", "masked.jsonl", "--camera", "cam.json", "--out", "model.ckpt"]);
    ok(d, &["infer", "--config", cfg, "--model", "model.ckpt", "--input", "masked.jsonl", "--camera", "cam.json", "--out", "pred.jsonl"]);
    ok(d, &["traj", "--config", cfg, "--poses", "pred.jsonl", "--input", "masked.jsonl", "--camera", "cam.json", "--out", "traj.csv"]);
    let p1 = protocol_value(&ok(d, &["eval", "--pred", "pred.jsonl", "--gt", "gt.jsonl", "--protocol", "1"]), 1);
    let p2 = protocol_value(
        &ok(d, &["eval", "--pred", "pred.jsonl", "--gt", "gt.jsonl", "--traj", "traj.csv", "--protocol", "2"]),
        2,
    );
    assert!(p1.is_finite() && p1 > 0.0, "{p1}");
    assert!(p2.is_finite() && p2 > 0.0, "{p2}");
    assert!(start.elapsed() < Duration::from_secs(600));
    for f in ["gt.jsonl", "masked.jsonl", "model.ckpt", "pred.jsonl", "traj.csv"] {
        assert!(d.join(format!("{f}.manifest.json")).exists(), "{f}");
    }
    let history = std::fs::read_to_string(d.join("model.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);
}
