use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn truthprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_truthprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"{"name": "d", "num_records": 300, "num_layers": 3, "hidden_dim": 8,
    "planted_cell": {"layer": 2, "position": "exact_first"}, "seed": 9}"#;

fn synth_dump(dir: &Path) {
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    let out = truthprobe(&["synth", "--config", "cfg.json", "--out", "d"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_accepts_synth_dump() {
    let dir = tempfile::tempdir().unwrap();
    synth_dump(dir.path());
    let out = truthprobe(&["validate", "d", "--out", "report.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["violations"], serde_json::json!([]));
    assert_eq!(report["records"], 300);
}

#[test]
fn validate_lists_violations_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    synth_dump(dir.path());
    let manifest = dir.path().join("d/manifest.jsonl");
    let text = fs::read_to_string(&manifest).unwrap();
    // Corrupt p_true on the first record.
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[0]["p_true"] = serde_json::json!(1.5);
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(&manifest, body).unwrap();
    let out = truthprobe(&["validate", "d"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("d-00000"), "{stdout}");
    assert!(stdout.contains("1 violations"), "{stdout}");
}

#[test]
fn sweep_argmax_matches_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    synth_dump(dir.path());
    let out = truthprobe(&["sweep", "d", "--out", "grid.csv"], dir.path());
    assert!(out.status.success());
    let grid = truthprobe::eval::AucGrid::from_csv(&fs::read_to_string(dir.path().join("grid.csv")).unwrap()).unwrap();
    let truth = truthprobe::synth::read_ground_truth(dir.path().join("d")).unwrap();
    assert_eq!(grid.select_best_cell().unwrap(), truth.cell);
    assert!(dir.path().join("grid.dispersion.csv").exists());
    let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "sweep");
    assert_eq!(run["seed"], 0);
    assert_eq!(run["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = truthprobe(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    synth_dump(dir.path());
    let out = truthprobe(&["detect", "d", "--method", "logits-median", "--out", "s.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = truthprobe(&["train", "d", "--cell", "two:eoq", "--out", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = truthprobe(&["sweep", "missing", "--out", "grid.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("grid.csv").exists());

    // No resamples, so taxonomy cannot run.
    synth_dump(dir.path());
    let out = truthprobe(&["taxonomy", "d", "--out", "t.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_synth_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    for (out, seed) in [("x", "9"), ("y", "10")] {
        assert!(truthprobe(&["synth", "--config", "cfg.json", "--out", out, "--seed", seed], dir.path()).status.success());
    }
    let a = fs::read(dir.path().join("x/activations.bin")).unwrap();
    let b = fs::read(dir.path().join("y/activations.bin")).unwrap();
    assert_ne!(a, b);
    let run: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("y/run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 10);
}

#[test]
fn guide_synth_config_parses() {
    let chapter = include_str!("../../../book/src/cli.md");
    let block = chapter.split("```json\n").nth(1).unwrap().split("```").next().unwrap();
    let config: truthprobe::synth::SynthConfig = serde_json::from_str(block).unwrap();
    config.validate().unwrap();
    assert_eq!(config.taxonomy_mix.len(), 3);
}
