use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dart")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
[simulation]
n = 5
m = 4
d = 5
k = 2
p = 2
q = 3
pi_miss = 0.2
seed = 11

[sampler]
chains = 2
warmup = 60
samples = 30

[crossval]
folds = 2

[benchmark]
folds = 2
restarts = 4
"#;

fn simulated(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let sim = dir.join("sim");
    let out = dart(&["--config", path(&cfg), "--out", path(&sim), "simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    sim
}

#[test]
fn no_arguments_prints_usage() {
    let out = dart(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
}

#[test]
fn unknown_input_is_rejected() {
    for args in [&["frobnicate"][..], &["fit", "--bogus"][..]] {
        let out = dart(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[sampler]\nchians = 2\n").unwrap();
    let out = dart(&["--config", path(&cfg), "fit"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("chians"));
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let run = sim.join("run.toml");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = dart(&["--config", path(&run), "--seed", "1", "--out", path(&out_dir), "fit"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((
            fs::read(out_dir.join("draws.csv")).unwrap(),
            fs::read(out_dir.join("fit.manifest.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let other = dir.path().join("c");
    assert!(dart(&["--config", path(&run), "--seed", "2", "--threads", "1", "--out", path(&other), "fit"]).status.success());
    assert_ne!(fs::read(other.join("draws.csv")).unwrap(), outputs[0].0);
}

#[test]
fn simulate_then_analyse() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let run = sim.join("run.toml");
    let out_dir = dir.path().join("fit");
    for cmd in ["fit", "predict", "diagnose", "report", "benchmark", "crossval"] {
        let out = dart(&["--config", path(&run), "--out", path(&out_dir), cmd]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join(format!("{cmd}.manifest.json")).exists(), "{cmd}");
    }
    let predictions = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 5 * 4 * 5);
    let activity = fs::read_to_string(out_dir.join("activity.csv")).unwrap();
    assert_eq!(activity.lines().count(), 1 + 5 * 4 * 3);
    let benchmark = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    assert!(benchmark.starts_with("pair,kind,fold,in_rmse,out_rmse,in_r2,out_r2,converged"));
    let criteria: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("criteria.json")).unwrap()).unwrap();
    assert!(criteria["waic"].as_f64().unwrap().is_finite());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.manifest.json")).unwrap()).unwrap();
    assert!(manifest["inputs"]["draws.csv"].is_string());
    assert!(manifest["outputs"]["prioritization.csv"].is_string());

    let exposure = dir.path().join("exposure.csv");
    fs::write(&exposure, "chemical_id,seem3\nchem0,1e-3\nchem4,2e-2\n").unwrap();
    let out = dart(&["--config", path(&run), "--out", path(&out_dir), "report", "--exposure", path(&exposure)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn draws_must_match_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulated(dir.path());
    let run = sim.join("run.toml");
    let out_dir = dir.path().join("fit");
    assert!(dart(&["--config", path(&run), "--out", path(&out_dir), "fit"]).status.success());
    let text = fs::read_to_string(&run).unwrap().replace("k = 2", "k = 3");
    let changed = sim.join("k3.toml");
    fs::write(&changed, text).unwrap();
    let out = dart(&["--config", path(&changed), "--out", path(&out_dir), "predict"]);
    assert!(!out.status.success());
}
