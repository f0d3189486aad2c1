use std::collections::HashMap;
use std::process::{Command, Output};

use edl_core::witness::Witness;
use serde_json::Value;

fn edlkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edlkit")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Rows of a CSV stdout as column -> text maps.
fn rows(out: &Output) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

fn fixture(name: &str) -> String {
    format!("{}/../core/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn synth_d4_all_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d4.json");
    let out = edlkit(&["synth", "--state", "d4", "--family", "12,23,34,14,13,24", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = &rows(&out)[0];
    assert!((num(r, "alpha") + 0.0285).abs() < 1e-3);
    assert!((num(r, "p_noise") - 0.3131).abs() < 2e-3);
    let w = Witness::load(&path).unwrap();
    assert!((w.expr.trace() - 1.0).abs() < 1e-9);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["certificates"].as_array().unwrap().len(), 7);
    assert_eq!(v["state"], "D4");
}

#[test]
fn synth_single_body_family_is_not_detected() {
    let out = edlkit(&["synth", "--state", "w3", "--family", "1,2,3"]);
    assert_eq!(code(&out), 3);
    assert_eq!(rows(&out)[0]["detected"], "false");
}

#[test]
fn synth_c4_triples_json() {
    let out = edlkit(&["synth", "--state", "c4", "--family", "123,124,134,234", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v[0]["p_noise"].as_f64().unwrap() - 0.5).abs() < 2e-3);
}

#[test]
fn synth_from_state_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w3.json");
    let a = 1.0 / 3f64.sqrt();
    let amps: Vec<[f64; 2]> = (0..8).map(|i| if [1, 2, 4].contains(&i) { [a, 0.0] } else { [0.0, 0.0] }).collect();
    std::fs::write(&path, serde_json::json!({ "amplitudes": amps }).to_string()).unwrap();
    let out = edlkit(&["synth", "--state-file", path.to_str().unwrap(), "--family", "12,23"]);
    assert_eq!(code(&out), 0);
    assert!((num(&rows(&out)[0], "alpha") + 0.0285).abs() < 1e-3);
}

#[test]
fn eval_near_noise_threshold() {
    let out = edlkit(&["eval", "--witness", "d4:w5", "--state", "d4", "--noise", "0.31"]);
    assert_eq!(code(&out), 0);
    let v = num(&rows(&out)[0], "value");
    assert!(v < 0.0 && v > -1e-3, "{v}");
    let out = edlkit(&["eval", "--witness", "d4:w5", "--state", "d4", "--noise", "0.32"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn eval_witness_file_defaults_to_its_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    edl_core::witness::load_catalog_witness(edl_core::states::NamedState::C4, 4).unwrap().save(&path).unwrap();
    let out = edlkit(&["eval", "--witness", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!((num(&rows(&out)[0], "value") + 0.0625).abs() < 5e-4);
}

#[test]
fn robustness_crossovers() {
    let dir = tempfile::tempdir().unwrap();
    let curves = dir.path().join("curves.csv");
    let out = edlkit(&[
        "robustness",
        "--witness",
        "d4:w5",
        "--compare",
        "projector",
        "--mode",
        "all",
        "--theta",
        "0:0.6:0.005",
        "--curves",
        curves.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let r = &rows(&out)[0];
    assert!((num(r, "crossover") - 0.26).abs() < 0.02);
    assert_eq!(r["points"], "121");
    let text = std::fs::read_to_string(&curves).unwrap();
    assert_eq!(text.lines().count(), 122);
    assert!(text.starts_with("theta,tolerance_a,tolerance_b\n0,0.313"));

    let out = edlkit(&["robustness", "--witness", "d4:w5", "--compare", "projector", "--mode", "y", "--state", "d4"]);
    assert!((num(&rows(&out)[0], "crossover") - 0.29).abs() < 0.02);
}

#[test]
fn csv_and_json_encode_the_same_values() {
    let args = ["estimate", "--expectations", &fixture("c4a.csv"), "--witness", "c4:w4"];
    let csv_out = edlkit(&args);
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let json_out = edlkit(&json_args);
    assert_eq!(code(&csv_out), 0);
    let r = &rows(&csv_out)[0];
    let v: Value = serde_json::from_slice(&json_out.stdout).unwrap();
    for key in ["value", "sigma"] {
        let full = v[0][key].as_f64().unwrap();
        let shown = num(r, key);
        assert!((full - shown).abs() <= 5e-6 * full.abs(), "{key}: {full} vs {shown}");
    }
    assert_eq!(v[0]["inputs"], 16);
    assert!((num(r, "value") + 0.0573).abs() < 1e-3);
}

#[test]
fn estimate_tables() {
    let out = edlkit(&["estimate", "--expectations", &fixture("d4a.csv"), "--fidelity", "d4"]);
    assert_eq!(code(&out), 0);
    assert!((num(&rows(&out)[0], "value") - 0.974).abs() < 0.002);

    let out = edlkit(&["estimate", "--expectations", &fixture("w3a.csv"), "--fidelity", "w3", "--bit-flip"]);
    assert!((num(&rows(&out)[0], "value") - 0.982).abs() < 0.01);

    let out = edlkit(&["estimate", "--expectations", &fixture("d4d.csv"), "--witness", "d4:w5"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts");
    let args = ["simulate", "--witness", "d4:w5", "--state", "d4", "--shots", "20000", "--seed", "11"];
    let mut with_dir = args.to_vec();
    with_dir.extend(["--counts-dir", counts.to_str().unwrap()]);
    let a = edlkit(&with_dir);
    let b = edlkit(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let r = &rows(&a)[0];
    assert_eq!(r["seed"], "11");
    assert_eq!(r["generator"], "ChaCha8Rng");
    assert!((num(r, "value") - num(r, "exact")).abs() < 5.0 * num(r, "sigma"));

    let manifest = counts.join("manifest.json");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    let est = edlkit(&["estimate", "--counts", manifest.to_str().unwrap(), "--witness", "d4:w5"]);
    let e = &rows(&est)[0];
    assert_eq!(e["value"], r["value"]);
    assert_eq!(e["sigma"], r["sigma"]);
    assert_eq!(e["inputs"], "3");

    let other = edlkit(&["simulate", "--witness", "d4:w5", "--shots", "20000", "--seed", "12"]);
    assert_ne!(rows(&other)[0]["value"], r["value"]);
}

#[test]
fn edl_values() {
    let out = edlkit(&["edl", "--state", "w3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(rows(&out)[0]["edl"], "2");
    let out = edlkit(&["edl", "--state", "w3", "--noise", "1"]);
    assert_eq!(code(&out), 3);
    assert_eq!(rows(&out)[0]["edl"], "");
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "format=json\nmax_iter=2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = edlkit(&["--config", cfg, "synth", "--state", "w3", "--family", "12,23"]);
    assert_eq!(code(&out), 4);
    let out = edlkit(&["--config", cfg, "--max-iter", "100", "synth", "--state", "w3", "--family", "12,23"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v[0]["alpha"].as_f64().unwrap() < 0.0);
    let out = edlkit(&["--config", cfg, "--max-iter", "100", "--format", "csv", "synth", "--state", "w3", "--family", "12,23"]);
    assert!(out.stdout.starts_with(b"state,"));
}

#[test]
fn input_errors() {
    for args in [
        vec!["eval", "--witness", "nope", "--state", "d4"],
        vec!["synth", "--state", "d4", "--family", "1x"],
        vec!["synth", "--state", "q5", "--family", "12"],
        vec!["eval", "--witness", "d4:w9", "--state", "d4"],
        vec!["eval", "--witness", "d4:w5", "--state", "d4", "--noise", "1.5"],
        vec!["estimate", "--expectations", "/nonexistent.csv", "--fidelity", "d4"],
        vec!["robustness", "--witness", "d4:w5", "--compare", "projector", "--theta", "0:1"],
        vec!["synth", "--family", "12"],
        vec!["bogus"],
    ] {
        let out = edlkit(&args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn thread_cap() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_edlkit"))
            .args(["robustness", "--witness", "d4:w5", "--compare", "projector"])
            .env("EDLKIT_THREADS", v)
            .output()
            .unwrap()
    };
    let one = run("1");
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, run("4").stdout);
    assert_eq!(code(&run("0")), 2);
}
