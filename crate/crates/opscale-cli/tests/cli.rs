//! End-to-end CLI behavior: instance detection, exit codes, schema round
//! trips and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opscale"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn opscale")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("opscale_cli_{name}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn certify_all_ones_matrix_exits_zero() {
    let dir = workdir("ones");
    fs::write(dir.join("b.csv"), "1,1\n1,1\n").unwrap();
    let out = run_in(&dir, &["certify", "b.csv"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["lambda"].as_f64().unwrap(), 1.0);
    assert!(report["gap_condition_holds"].as_bool().unwrap());
}

#[test]
fn certify_identity_matrix_exits_two() {
    let dir = workdir("ident");
    fs::write(dir.join("b.csv"), "1,0\n0,1\n").unwrap();
    let out = run_in(&dir, &["certify", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["lambda"].as_f64().unwrap(), 0.0);
}

#[test]
fn certify_rejects_garbage_with_exit_one() {
    let dir = workdir("garbage");
    fs::write(dir.join("bad.csv"), "not,a\nnumber,here\n").unwrap();
    let out = run_in(&dir, &["certify", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    // missing file also exits 1
    let out = run_in(&dir, &["certify", "nope.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn certify_frame_matches_library_bit_for_bit() {
    let dir = workdir("frame_roundtrip");
    let gen = run_in(&dir, &["generate", "unit-frame", "--n", "24", "--d", "4", "--seed", "9", "--out", "frame.json"]);
    assert_eq!(gen.status.code(), Some(0));
    let out = run_in(&dir, &["certify", "frame.json"]);
    let cli_report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let frame = opscale::moments::random_unit_frame(24, 4, 9);
    let lib_report =
        opscale::spectral::certify_frame(&frame, &opscale::GapOptions::default()).unwrap();
    assert_eq!(cli_report["sigma1"].as_f64().unwrap(), lib_report.sigma1);
    assert_eq!(cli_report["sigma2"].as_f64().unwrap(), lib_report.sigma2);
    assert_eq!(cli_report["lambda"].as_f64().unwrap(), lib_report.lambda);
    assert_eq!(cli_report["epsilon"].as_f64().unwrap(), lib_report.epsilon);
}

#[test]
fn scale_balanced_input_converges_immediately() {
    let dir = workdir("balanced");
    fs::write(dir.join("b.csv"), "0.25,0.25\n0.25,0.25\n").unwrap();
    let out = run_in(&dir, &["scale", "b.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["iterations"].as_u64().unwrap(), 0);
    assert!(result["converged"].as_bool().unwrap());
    assert!(dir.join("scale_trace.csv").exists());
    assert!(dir.join("scale_result.json").exists());
}

#[test]
fn scale_budget_exhaustion_exits_three() {
    let dir = workdir("budget");
    fs::write(dir.join("b.csv"), "2,0.1\n0.1,1\n").unwrap();
    let out = run_in(&dir, &["scale", "b.csv", "--max-iters", "3", "--eta", "1e-12"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scale_divergence_exits_four() {
    let dir = workdir("diverge");
    fs::write(dir.join("b.csv"), "2,0.1\n0.1,1\n").unwrap();
    let out = run_in(&dir, &["scale", "b.csv", "--alpha", "1e6"]);
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn scale_singular_instance_exits_four() {
    let dir = workdir("singular");
    // zero row cannot be rescaled by the alternating method
    fs::write(dir.join("b.csv"), "0,0\n1,1\n").unwrap();
    let out = run_in(&dir, &["scale", "b.csv", "--algorithm", "alternating"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn scale_operator_json_round_trips() {
    let dir = workdir("op_json");
    let op_json = serde_json::json!({
        "type": "operator",
        "m": 2, "n": 2, "k": 2,
        "matrices": [[[0.9, 0.1],[0.0, 0.2]], [[0.1, 0.0],[0.3, 0.8]]],
    });
    fs::write(dir.join("op.json"), serde_json::to_string(&op_json).unwrap()).unwrap();
    let out = run_in(&dir, &["scale", "op.json", "--eta", "1e-7", "--max-iters", "500000"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["final_instance"]["type"].as_str().unwrap(), "operator");
    // the reported scalings recompose the final operator from the input
    let l = &result["L"];
    assert_eq!(l.as_array().unwrap().len(), 2);
}

#[test]
fn capacity_of_doubly_stochastic_matrix() {
    let dir = workdir("capacity");
    fs::write(dir.join("b.csv"), "0.5,0.5\n0.5,0.5\n").unwrap();
    let out = run_in(&dir, &["capacity", "b.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let log_exact = report["log_exact"].as_f64().unwrap();
    assert!((log_exact - 2f64.ln()).abs() < 1e-6, "cap should be n = 2");
}

#[test]
fn permanent_bound_of_doubly_stochastic() {
    let dir = workdir("perm");
    fs::write(dir.join("b.csv"), "0.5,0.5\n0.5,0.5\n").unwrap();
    let out = run_in(&dir, &["permanent-bound", "b.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["log_bound"].as_f64().unwrap() - (-2.0)).abs() < 1e-9);
    assert!(report["log_permanent"].as_f64().unwrap() >= report["log_bound"].as_f64().unwrap());
}

#[test]
fn permanent_bound_refuses_gapless_matrix() {
    let dir = workdir("perm_refuse");
    fs::write(dir.join("b.csv"), "1,0\n0,1\n").unwrap();
    let out = run_in(&dir, &["permanent-bound", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn certify_csv_format_output() {
    let dir = workdir("csvfmt");
    fs::write(dir.join("b.csv"), "1,1\n1,1\n").unwrap();
    let out = run_in(&dir, &["certify", "b.csv", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sigma1,sigma2,s,delta,lambda,epsilon,gap_condition_holds,C");
    let row = lines.next().unwrap();
    assert!(row.starts_with("2.0000000000000000e0,"), "row: {row}");
}

#[test]
fn certify_rejects_unknown_json_type() {
    let dir = workdir("badtype");
    fs::write(dir.join("x.json"), r#"{"type":"mystery","data":[1,2]}"#).unwrap();
    let out = run_in(&dir, &["certify", "x.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("discriminator"));
}

#[test]
fn capacity_of_frame_instance() {
    let dir = workdir("frame_cap");
    let gen = run_in(&dir, &["generate", "unit-frame", "--n", "64", "--d", "4", "--seed", "2", "--out", "f.json"]);
    assert_eq!(gen.status.code(), Some(0));
    // the measured gap at this small scale needs a modest constant in the
    // certification condition
    let out = run_in(&dir, &["capacity", "f.json", "--gap-constant", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // s = n = 64 for unit frames; the window sits at or below ln(64)
    assert!(report["log_upper"].as_f64().unwrap() <= 64f64.ln() + 1e-12);
    assert_eq!(report["method"].as_str().unwrap(), "spectral_gap");
}

#[test]
fn unknown_experiment_exits_one() {
    let dir = workdir("unknown_exp");
    let out = run_in(&dir, &["experiment", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generate_is_seed_deterministic() {
    let dir = workdir("gen_det");
    let a = run_in(&dir, &["generate", "gaussian-matrix", "--n", "6", "--seed", "3"]);
    let b = run_in(&dir, &["generate", "gaussian-matrix", "--n", "6", "--seed", "3"]);
    let c = run_in(&dir, &["generate", "gaussian-matrix", "--n", "6", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn outputs_are_byte_reproducible() {
    let dir = workdir("determinism");
    fs::write(dir.join("b.csv"), "1.5,0.4,0.8\n0.2,1.1,0.9\n0.7,0.3,1.2\n").unwrap();
    for args in [
        vec!["certify", "b.csv"],
        vec!["scale", "b.csv", "--eta", "1e-7", "--record-every", "10"],
        vec!["capacity", "b.csv"],
    ] {
        let a = run_in(&dir, &args);
        let first_trace = fs::read(dir.join("scale_trace.csv")).ok();
        let b = run_in(&dir, &args);
        let second_trace = fs::read(dir.join("scale_trace.csv")).ok();
        assert_eq!(a.stdout, b.stdout, "stdout differs for {args:?}");
        assert_eq!(first_trace, second_trace, "trace differs for {args:?}");
    }
}
