mod common;

use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use h2iid::cli::{load_gain, run, Command, RunConfig};
use serde_json::Value;

use common::data_path;

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// `"*"` in the golden matches anything; numbers match to a relative 1e-6.
fn assert_matches(path: &str, got: &Value, want: &Value) {
    match (got, want) {
        (_, Value::String(s)) if s == "*" => {}
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{path}: {a} vs golden {b}");
        }
        (Value::Object(a), Value::Object(b)) => {
            let ka: Vec<_> = a.keys().collect();
            let kb: Vec<_> = b.keys().collect();
            assert_eq!(ka, kb, "{path}: key sets differ");
            for (k, v) in b {
                assert_matches(&format!("{path}.{k}"), &a[k], v);
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length differs");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_matches(&format!("{path}[{i}]"), x, y);
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

fn scalar_config(command: Command, file: &str) -> RunConfig {
    let mut cfg = RunConfig::new(command, data_path(&format!("{file}.json")));
    cfg.paths = 200;
    cfg.horizon = 8;
    cfg.seed = 7;
    cfg
}

fn check_golden(command: Command, file: &str) {
    let out = run(&scalar_config(command, file));
    assert_eq!(out.exit_code, 0, "{}", out.document);
    let golden = golden_path(&format!("{file}.{}.json", command.as_str()));
    let want: Value = serde_json::from_str(&std::fs::read_to_string(golden).unwrap()).unwrap();
    assert_matches("$", &out.document, &want);
}

#[test]
fn golden_deterministic_analyze() {
    check_golden(Command::Analyze, "scalar_deterministic");
}

#[test]
fn golden_deterministic_oracle() {
    check_golden(Command::Oracle, "scalar_deterministic");
}

#[test]
fn golden_deterministic_simulate() {
    check_golden(Command::Simulate, "scalar_deterministic");
}

#[test]
fn golden_uniform_analyze() {
    check_golden(Command::Analyze, "scalar_uniform");
}

#[test]
fn golden_uniform_oracle() {
    check_golden(Command::Oracle, "scalar_uniform");
}

#[test]
fn golden_uniform_simulate() {
    check_golden(Command::Simulate, "scalar_uniform");
}

#[test]
fn scalar_values_closed_form() {
    // a = 0.5: gamma^2 = 1 / (1 - a^2); uniform on [-1, 1]: 1 / (1 - 1/3).
    for (file, g2) in [("scalar_deterministic", 4.0 / 3.0), ("scalar_uniform", 1.5)] {
        let doc = run(&scalar_config(Command::Analyze, file)).document;
        let norm = doc["results"]["h2_norm"].as_f64().unwrap();
        assert!((norm * norm - g2).abs() < 1e-6, "{file}: {norm}");
        let doc = run(&scalar_config(Command::Oracle, file)).document;
        let s = doc["results"]["s_inf"].as_f64().unwrap();
        assert!((s - g2).abs() < 1e-10, "{file}: {s}");
    }
}

#[test]
fn hash_and_seed_recorded() {
    let out = run(&scalar_config(Command::Simulate, "scalar_uniform"));
    let h = out.document["input_sha256"].as_str().unwrap();
    assert_eq!(h.len(), 64);
    assert_eq!(out.document["seed"], 7);
    let again = run(&scalar_config(Command::Simulate, "scalar_uniform"));
    assert_eq!(out.document, again.document);
}

#[test]
fn open_loop_benchmark_is_verdict_exit() {
    let out = run(&RunConfig::new(Command::Analyze, data_path("benchmark_plant.json")));
    assert_eq!(out.exit_code, 2);
    assert_eq!(out.document["results"]["stable"], false);
    assert!(out.document["results"]["h2_norm"].is_null());
}

#[test]
fn oracle_on_unstable_is_verdict() {
    let out = run(&RunConfig::new(Command::Oracle, data_path("benchmark_plant.json")));
    assert_eq!(out.exit_code, 2, "{}", out.document);
}

#[test]
fn missing_input_is_error_exit() {
    let out = run(&RunConfig::new(Command::Analyze, "/nonexistent/system.json"));
    assert_eq!(out.exit_code, 1);
    assert!(out.document["error"]["message"].is_string());
    assert!(out.document["results"].is_null());
}

#[test]
fn malformed_input_is_error_exit() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dims": {"n": 1}, "xi": [], "matrices": {}}"#).unwrap();
    let out = run(&RunConfig::new(Command::Analyze, &bad));
    assert_eq!(out.exit_code, 1);
    assert!(out.document["error"]["kind"].is_string());
}

#[test]
fn gain_rejected_for_synthesis() {
    let mut cfg = RunConfig::new(Command::Synthesize, data_path("benchmark_plant.json"));
    cfg.gain = Some("1,0,0".into());
    assert_eq!(run(&cfg).exit_code, 1);
}

#[test]
fn inline_gain_parses_rows() {
    let g = load_gain("1,2;3,4").unwrap();
    assert_eq!((g.nrows(), g.ncols()), (2, 2));
    assert_eq!(g[(1, 0)], 3.0);
    assert!(load_gain("1,x").is_err());
}

#[test]
fn synthesized_gain_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.json");
    let mut cfg = RunConfig::new(Command::Synthesize, data_path("benchmark_plant.json"));
    cfg.output = Some(synth.clone());
    assert_eq!(h2iid::cli::run_and_emit(&cfg), 0);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&synth).unwrap()).unwrap();
    let gamma = doc["results"]["gamma"].as_f64().unwrap();

    let mut cfg = RunConfig::new(Command::Analyze, data_path("benchmark_plant.json"));
    cfg.gain = Some(synth.display().to_string());
    let out = run(&cfg);
    assert_eq!(out.exit_code, 0);
    let norm = out.document["results"]["h2_norm"].as_f64().unwrap();
    assert!((norm - gamma).abs() < 1e-4 * gamma, "{norm} vs {gamma}");
    assert_eq!(out.document["results"]["F"], doc["results"]["F"]);
}

#[test]
fn binary_writes_document_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.json");
    let trace = dir.path().join("trace.csv");
    let status = Proc::new(env!("CARGO_BIN_EXE_h2iid"))
        .args(["simulate", "--input"])
        .arg(data_path("scalar_uniform.json"))
        .args(["--paths", "50", "--horizon", "4", "--seed", "3", "--output"])
        .arg(&out)
        .arg("--trace")
        .arg(&trace)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["results"]["n_paths"], 50);
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "k,mean,std_error");
    assert_eq!(lines.len(), 6);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_h2iid");
    let code = |args: &[&str]| Proc::new(bin).args(args).output().unwrap().status.code();
    let bench = data_path("benchmark_plant.json").display().to_string();
    assert_eq!(code(&["analyze", "--input", &bench]), Some(2));
    assert_eq!(code(&["analyze", "--input", &bench, "--gain", "1.6739,0.1027,-1.71"]), Some(0));
    assert_eq!(code(&["analyze", "--input", "/nonexistent.json"]), Some(1));
    assert_eq!(code(&["analyze", "--input", &bench, "--gain", "-1,0,0"]), Some(2));
    assert_eq!(code(&["analyze", "--input", &bench, "--eps=-1"]), Some(1));
    assert_eq!(code(&["analyze", "--input", &bench, "--bogus"]), Some(1));
}
