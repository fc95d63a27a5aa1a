use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flexcraft_core::scenario::example_scenario_file;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexcraft"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The example scenario shortened to `t_final` seconds without events.
fn short_example(dir: &Path, t_final: f64) -> PathBuf {
    let mut f = example_scenario_file();
    f.t_final = t_final;
    f.events.clear();
    let path = dir.join(format!("short_{t_final}.json"));
    fs::write(&path, f.to_json().unwrap()).unwrap();
    path
}

fn design_for(dir: &Path, scenario: &Path) -> PathBuf {
    let out = dir.join("design.json");
    let o = run(&["design", "--scenario", p(scenario), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

/// Every error path prints exactly one `error[kind]: ...` line.
fn assert_one_error_line(o: &Output, kind: &str) {
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("error[{kind}]: ")), "stderr: {err}");
}

#[test]
fn shipped_example_matches_builtin_scenario() {
    let shipped = fs::read_to_string(repo_file("scenarios/example.json")).unwrap();
    assert_eq!(shipped, example_scenario_file().to_json().unwrap() + "\n");
}

#[test]
fn example_design_has_expected_e0() {
    let dir = TempDir::new().unwrap();
    let design = design_for(dir.path(), &repo_file("scenarios/example.json"));
    let v: Value = serde_json::from_str(&fs::read_to_string(design).unwrap()).unwrap();
    let e0: Vec<Vec<f64>> = serde_json::from_value(v["E0"].clone()).unwrap();
    let expected = [
        [2.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.36, 2.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 3.0, 2.0],
    ];
    for (row, exp) in e0.iter().zip(expected) {
        for (a, b) in row.iter().zip(exp) {
            assert!((a - b).abs() <= 1e-8, "{e0:?}");
        }
    }
    let blocks: Vec<Vec<Vec<f64>>> = serde_json::from_value(v["E_blocks"].clone()).unwrap();
    assert_eq!(blocks.len(), 1);
    // third row, axis-3 columns
    assert!((blocks[0][2][4] + 1.0).abs() <= 1e-8 && blocks[0][2][5].abs() <= 1e-8, "{blocks:?}");
    assert!(blocks[0][..2].iter().flatten().all(|v| v.abs() <= 1e-8));
}

#[test]
fn duplicate_frequencies_name_the_axis() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::to_value(example_scenario_file()).unwrap();
    let tone = v["disturbance"]["axes"][1]["tones"][0].clone();
    v["disturbance"]["axes"][1]["tones"].as_array_mut().unwrap().push(tone);
    let path = dir.path().join("dup.json");
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["design", "--scenario", p(&path), "--out", p(&dir.path().join("d.json"))]);
    assert_eq!(code(&o), 1);
    assert_one_error_line(&o, "invalid-input");
    assert!(stderr(&o).contains("axis 2"), "{}", stderr(&o));
}

#[test]
fn rigid_scenario_designs_and_simulates() {
    let dir = TempDir::new().unwrap();
    let scenario = repo_file("scenarios/rigid.json");
    let design = design_for(dir.path(), &scenario);
    let v: Value = serde_json::from_str(&fs::read_to_string(&design).unwrap()).unwrap();
    assert_eq!(v["nominal_sigma"].as_array().unwrap().len(), 0);
    assert_eq!(v["E_blocks"].as_array().unwrap().len(), 0);
    let out = dir.path().join("run");
    let o = run(&["simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["check", "gains", "--scenario", p(&scenario), "--design", p(&design), "--json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["satisfied"], Value::Bool(true));
}

#[test]
fn zero_duration_gives_one_row() {
    let dir = TempDir::new().unwrap();
    let scenario = short_example(dir.path(), 0.0);
    let design = design_for(dir.path(), &scenario);
    let out = dir.path().join("run");
    let o = run(&["simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let scenario = short_example(dir.path(), 5.0);
    let design = design_for(dir.path(), &scenario);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "--seedless", "simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&out), "--decimate", "10",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        outputs.push((fs::read(out.join("trajectory.csv")).unwrap(), m));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1["input_sha256"], outputs[1].1["input_sha256"]);
    assert_eq!(outputs[0].1["trajectory_sha256"], outputs[1].1["trajectory_sha256"]);
    assert_eq!(outputs[0].1["records"], Value::from(501));
}

#[test]
fn overrides_change_the_input_hash() {
    let dir = TempDir::new().unwrap();
    let scenario = short_example(dir.path(), 1.0);
    let design = design_for(dir.path(), &scenario);
    let hash = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&out)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["input_sha256"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&[], "a"), hash(&["--dt", "2e-3"], "b"));
}

#[test]
fn missing_design_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let scenario = short_example(dir.path(), 1.0);
    let o = run(&[
        "simulate",
        "--scenario",
        p(&scenario),
        "--design",
        p(&dir.path().join("nope.json")),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "usage");
}

#[test]
fn schema_violations_exit_two() {
    let dir = TempDir::new().unwrap();
    let mut v: Value = serde_json::to_value(example_scenario_file()).unwrap();
    v["colour"] = Value::from("blue");
    let path = dir.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["design", "--scenario", p(&path), "--out", p(&dir.path().join("d.json"))]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "schema");

    v = serde_json::to_value(example_scenario_file()).unwrap();
    v["schema_version"] = Value::from(7);
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["design", "--scenario", p(&path), "--out", p(&dir.path().join("d.json"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("schema_version"));
}

#[test]
fn bad_arguments_exit_two_with_one_line() {
    let o = run(&["simulate", "--scenario"]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "usage");
    let o = run(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "usage");
}

#[test]
fn divergence_reports_the_time() {
    let dir = TempDir::new().unwrap();
    let mut f = example_scenario_file();
    f.t_final = 400.0;
    f.events.clear();
    f.dt = 4.0;
    let path = dir.path().join("coarse.json");
    fs::write(&path, f.to_json().unwrap()).unwrap();
    let design = design_for(dir.path(), &path);
    let o = run(&["simulate", "--scenario", p(&path), "--design", p(&design), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert_one_error_line(&o, "diverged");
    assert!(stderr(&o).contains("t = "));
}

#[test]
fn design_from_another_scenario_is_rejected() {
    let dir = TempDir::new().unwrap();
    let design = design_for(dir.path(), &repo_file("scenarios/rigid.json"));
    let scenario = short_example(dir.path(), 1.0);
    let o = run(&["simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&o), 1);
    assert_one_error_line(&o, "dimension");
}

fn simulated_short(dir: &Path, t_final: f64) -> (PathBuf, PathBuf, PathBuf) {
    let scenario = short_example(dir, t_final);
    let design = design_for(dir, &scenario);
    let out = dir.join("run");
    let o = run(&["simulate", "--scenario", p(&scenario), "--design", p(&design), "--out", p(&out), "--decimate", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (scenario, design, out.join("trajectory.csv"))
}

#[test]
fn truncated_trajectory_is_a_schema_error() {
    let dir = TempDir::new().unwrap();
    let (scenario, design, csv) = simulated_short(dir.path(), 2.0);
    let text = fs::read_to_string(&csv).unwrap();
    let cut = dir.path().join("cut.csv");
    fs::write(&cut, &text[..text.len() - 40]).unwrap();
    let o = run(&[
        "check", "lyapunov", "--scenario", p(&scenario), "--design", p(&design), "--trajectory", p(&cut),
    ]);
    assert_eq!(code(&o), 2, "{}", stdout(&o));
    assert_one_error_line(&o, "schema");
}

#[test]
fn lyapunov_check_reports_each_interval() {
    let dir = TempDir::new().unwrap();
    let (scenario, design, csv) = simulated_short(dir.path(), 2.0);
    let report = dir.path().join("lyap.json");
    let o = run(&[
        "check", "lyapunov", "--scenario", p(&scenario), "--design", p(&design), "--trajectory", p(&csv), "--out",
        p(&report),
    ]);
    assert!([0, 2].contains(&code(&o)), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let segs = v["segments"].as_array().unwrap();
    assert_eq!(segs.len(), 1);
    assert_eq!(segs[0]["records"], Value::from(201));
    assert_eq!(v["satisfied"].as_bool().unwrap(), code(&o) == 0);
}

#[test]
fn convergence_without_adaptation_is_not_satisfied() {
    let dir = TempDir::new().unwrap();
    let (scenario, design, csv) = simulated_short(dir.path(), 2.0);
    let o = run(&[
        "check", "convergence", "--scenario", p(&scenario), "--design", p(&design), "--trajectory", p(&csv),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("no adaptive interval"));
}

fn write_signal(dir: &Path, name: &str, f: impl Fn(f64) -> f64) -> PathBuf {
    let mut s = String::from("t,w\n");
    for k in 0..=3000 {
        let t = k as f64 * 1e-2;
        s.push_str(&format!("{t},{}\n", f(t)));
    }
    let path = dir.join(name);
    fs::write(&path, s).unwrap();
    path
}

#[test]
fn constant_signal_is_pe() {
    let dir = TempDir::new().unwrap();
    let sig = write_signal(dir.path(), "c.csv", |_| 1.0);
    let o = run(&["check", "pe", "--signal", p(&sig), "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["report"]["min_window_gram_eig"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let sig = write_signal(dir.path(), "d.csv", |t| (-t).exp());
    let o = run(&["check", "pe", "--signal", p(&sig)]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("not PE"));
}

#[test]
fn pe_needs_a_source() {
    let o = run(&["check", "pe"]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "usage");
}

#[test]
fn reproduce_refuses_a_non_empty_directory() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let o = run(&["reproduce-example", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert_one_error_line(&o, "usage");
    assert!(stderr(&o).contains("--force"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn reproduce_at_coarser_step_passes_the_suite() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("example");
    let o = run(&["reproduce-example", "--out", p(&out), "--dt", "2e-3"]);
    assert_eq!(code(&o), 0, "{}\n{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));
    for f in [
        "scenario.json",
        "design.json",
        "trajectory.csv",
        "manifest.json",
        "summary.txt",
        "reports/convergence.json",
        "reports/gains.txt",
        "reports/lyapunov.json",
        "plots/quaternion_errors.gp",
        "plots/quaternion_errors.svg",
        "plots/adaptive_parameters.gp",
        "plots/adaptive_parameters.svg",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let conv: Value = serde_json::from_str(&fs::read_to_string(out.join("reports/convergence.json")).unwrap()).unwrap();
    let phase_c = conv["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["t_start"] == 400.0)
        .unwrap();
    assert_eq!(phase_c["components"][2]["converged"], Value::Bool(true));
    assert_eq!(phase_c["components"][0]["converged"], Value::Bool(false));

    // a second run into the same directory needs --force
    let o = run(&["reproduce-example", "--out", p(&out), "--dt", "2e-3"]);
    assert_eq!(code(&o), 2);
}
