//! End-to-end behaviour of the `slq` binary: the exit-code contract,
//! byte-deterministic reports, config error naming, and the output files
//! written under `--out`. Every test shells out to the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_on(command: &str, config: &str, extra: &[&str]) -> Output {
    let path = config_dir().join(config);
    let mut args = vec![command, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a config string to a temp file and runs a command on it.
fn run_inline(command: &str, config: &str) -> Output {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, config).unwrap();
    run(&[command, "--config", path.to_str().unwrap()])
}

#[test]
fn every_sample_config_validates_cleanly() {
    for config in [
        "benchmark.json",
        "heat.json",
        "node_tables.json",
        "ensemble.json",
        "game.json",
    ] {
        let out = run_on("validate", config, &[]);
        assert_eq!(exit_code(&out), 0, "{config}: {}", stderr_text(&out));
        let report = stdout_json(&out);
        assert_eq!(report["passed"], Value::Bool(true), "{config}");
    }
}

#[test]
fn solve_reports_the_benchmark_optimum() {
    let out = run_on("solve", "benchmark.json", &[]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let report = stdout_json(&out);
    let cost = report["results"]["cost"].as_f64().unwrap();
    assert!((cost - 0.25).abs() <= 1e-10, "cost {cost}");
    assert!(report["results"]["gradient_norm"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn reports_are_byte_deterministic() {
    for (command, config) in [
        ("solve", "heat.json"),
        ("duality-check", "ensemble.json"),
        ("nash", "game.json"),
    ] {
        let first = run_on(command, config, &["--seed", "3"]);
        let second = run_on(command, config, &["--seed", "3"]);
        assert_eq!(exit_code(&first), 0, "{command}: {}", stderr_text(&first));
        assert_eq!(
            first.stdout, second.stdout,
            "{command} {config}: reports differ"
        );
    }
}

#[test]
fn out_directory_receives_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_on(
        "solve",
        "heat.json",
        &["--out", dir.path().to_str().unwrap()],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let json = std::fs::read_to_string(dir.path().join("solve.json")).unwrap();
    let report: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["command"], Value::String("solve".into()));
    assert!(dir.path().join("solve.csv").exists());
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(
        summary.contains("solve: PASS"),
        "summary line missing: {summary}"
    );
}

#[test]
fn csv_format_prints_the_trial_table() {
    let out = run_on("gradient-check", "heat.json", &["--format", "csv"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let header = text.lines().next().unwrap_or_default();
    assert_eq!(header, "trial,epsilon,residual");
}

#[test]
fn unknown_fields_are_rejected_with_exit_two() {
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 1, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 2 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] },
             "weightz": {} }"#,
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr_text(&out).contains("weightz"),
        "stderr: {}",
        stderr_text(&out)
    );
}

#[test]
fn zero_steps_are_rejected_with_exit_two() {
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 1, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 0 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] } }"#,
    );
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr_text(&out).contains("steps"),
        "stderr: {}",
        stderr_text(&out)
    );
}

#[test]
fn wrong_schema_version_is_rejected() {
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 2, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 2 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] } }"#,
    );
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("schema_version"));
}

#[test]
fn node_paths_outside_the_tree_are_named() {
    // "uud" addresses level 3 but a two-step grid only has running levels 0..=1.
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 1, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 2 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] },
             "coefficients": { "drift": { "node_table": {
               "entries": { "uud": [0.1] }, "default": [0.0] } } } }"#,
    );
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("coefficients.drift"), "stderr: {err}");
    assert!(err.contains("uud"), "stderr: {err}");
}

#[test]
fn missing_node_entries_without_default_are_named() {
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 1, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 2 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] },
             "coefficients": { "drift": { "node_table": {
               "entries": { "": [0.1], "u": [0.2] } } } } }"#,
    );
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("no entry and no default"), "stderr: {err}");
    assert!(err.contains("'d'"), "stderr: {err}");
}

#[test]
fn node_tables_on_the_ensemble_backend_are_rejected() {
    let out = run_inline(
        "validate",
        r#"{ "schema_version": 1, "mode": "slq",
             "grid": { "t_end": 1.0, "steps": 2 },
             "backend": { "kind": "mc", "paths": 4 },
             "dims": { "state": 1, "control": 1 },
             "operator": { "eigenvalues": [0.0] },
             "coefficients": { "drift": { "node_table": {
               "entries": {}, "default": [0.1] } } } }"#,
    );
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("node tables require the tree backend"));
}

#[test]
fn indefinite_control_weight_is_informational_for_validate_fatal_for_solve() {
    let config = r#"{ "schema_version": 1, "mode": "slq",
         "grid": { "t_end": 1.0, "steps": 2 },
         "dims": { "state": 1, "control": 1 },
         "operator": { "eigenvalues": [-1.0] },
         "initial": { "state": [1.0] },
         "coefficients": { "b": { "constant": [[1.0]] } },
         "weights": { "r": { "constant": [[-1.0]] },
                      "g": { "constant": [[1.0]] } } }"#;

    let validate = run_inline("validate", config);
    assert_eq!(exit_code(&validate), 0, "{}", stderr_text(&validate));
    let report = stdout_json(&validate);
    assert_eq!(report["results"]["standard"], Value::Bool(false));
    assert!(report["results"]["r_min_eig"].as_f64().unwrap() <= -1.0 + 1e-12);

    let solve = run_inline("solve", config);
    assert_eq!(exit_code(&solve), 1);
    assert!(
        stderr_text(&solve).contains("eigenvalue"),
        "stderr: {}",
        stderr_text(&solve)
    );
}

#[test]
fn mode_and_command_mismatches_exit_one() {
    let solve = run_on("solve", "game.json", &[]);
    assert_eq!(exit_code(&solve), 1);
    assert!(stderr_text(&solve).contains("use the nash command"));

    let nash = run_on("nash", "heat.json", &[]);
    assert_eq!(exit_code(&nash), 1);
    assert!(stderr_text(&nash).contains("game"));
}

#[test]
fn duality_reports_are_labelled_by_backend() {
    let tree = stdout_json(&run_on("duality-check", "heat.json", &[]));
    assert_eq!(tree["results"]["statistical"], Value::Bool(false));
    assert_eq!(tree["passed"], Value::Bool(true));

    let mc = stdout_json(&run_on("duality-check", "ensemble.json", &[]));
    assert_eq!(mc["results"]["statistical"], Value::Bool(true));
    assert!(mc["results"]["bound_rule"]
        .as_str()
        .unwrap()
        .contains("std_err"));
    assert_eq!(mc["passed"], Value::Bool(true));
}

#[test]
fn gradient_check_passes_on_both_backends() {
    for config in ["heat.json", "ensemble.json"] {
        let out = run_on("gradient-check", config, &[]);
        assert_eq!(exit_code(&out), 0, "{config}: {}", stderr_text(&out));
        assert_eq!(stdout_json(&out)["passed"], Value::Bool(true), "{config}");
    }
}

#[test]
fn oracle_compare_agrees_with_the_solver() {
    let out = run_on("oracle-compare", "heat.json", &[]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let report = stdout_json(&out);
    assert_eq!(report["results"]["controls_agree"], Value::Bool(true));
    assert_eq!(report["results"]["costs_agree"], Value::Bool(true));
}

#[test]
fn nash_certifies_the_sample_game() {
    let out = run_on("nash", "game.json", &[]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let report = stdout_json(&out);
    assert_eq!(report["results"]["certified"], Value::Bool(true));
    assert_eq!(report["results"]["verification_passed"], Value::Bool(true));
}

#[test]
fn convergence_table_doubles_the_step_count() {
    let out = run_on("convergence", "benchmark.json", &[]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let report = stdout_json(&out);
    let table = report["table"].as_array().unwrap();
    let steps: Vec<i64> = table
        .iter()
        .map(|row| row["steps"].as_i64().unwrap())
        .collect();
    assert_eq!(steps, vec![4, 8, 16, 32]);
    assert_eq!(
        report["results"]["differences_decrease_monotonically"],
        Value::Bool(true)
    );
}

#[test]
fn missing_config_file_exits_two() {
    let out = run(&["solve", "--config", "/nonexistent/nowhere.json"]);
    assert_eq!(exit_code(&out), 2);
}
