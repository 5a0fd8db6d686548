use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lharmonic")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Data rows of a CSV table, split on commas.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(text: &str, name: &str) -> Vec<String> {
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows(text).into_iter().map(|r| r[i].clone()).collect()
}

fn floats(text: &str, name: &str) -> Vec<f64> {
    column(text, name).iter().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn dims_for_laplacian() {
    let o = run(&["dims", "--field", "identity.json", "--d", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got: Vec<(String, String, String)> = rows(&stdout(&o)).into_iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    let want = [("0", "1", "1"), ("1", "3", "3"), ("2", "5", "5"), ("3", "7", "7")];
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert_eq!((g.0.as_str(), g.1.as_str(), g.2.as_str()), w);
    }
}

#[test]
fn dims_at_degree_zero() {
    let o = run(&["dims", "--field", "identity.json", "--d", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "d,exact,estimated,flags\n0,1,1,\n");
}

#[test]
fn malformed_field_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{ "family": "radial_piecewise", "n": 2, "params": { "breakpoints": [0.5], "values": "two" } }"#).unwrap();
    let o = run(&["dims", "--field", path.to_str().unwrap(), "--d", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params.values"), "{}", stderr(&o));

    fs::write(&path, r#"{ "family": "identity", "n": 2, "colour": 1 }"#).unwrap();
    let o = run(&["dims", "--field", path.to_str().unwrap(), "--d", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["dims", "--field", "identity.json"]).status.code(), Some(2));
    assert_eq!(run(&["dims", "--field", "missing.json", "--d", "1"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "eigen28", "--field", "identity.json", "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "integrated", "--field", "identity.json", "--points-per-octave", "4"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--field", "identity.json", "--trace", "z"]).status.code(), Some(2));
    // Estimates for a variable field stop at degree 4.
    assert_eq!(run(&["dims", "--field", "radial_step.json", "--d", "5"]).status.code(), Some(2));
}

#[test]
fn verify_lemma1_closed_form() {
    let o = run(&["verify", "lemma1", "--field", "identity.json", "--t", "1", "--d", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(column(&text, "check")[0], "lemma1");
    let margin = floats(&text, "margin")[0];
    assert!((margin - 2.0).abs() < 1e-3, "margin {margin}");
}

#[test]
fn verify_eigen28_margins() {
    let o = run(&["verify", "eigen28", "--field", "diag_1_2.json", "--t", "1", "--k", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let margins = floats(&stdout(&o), "margin");
    assert_eq!(margins.len(), 50);
    assert!(margins.iter().all(|&m| m >= -1e-6));
}

#[test]
fn exit_code_tracks_margins() {
    // At a tolerance far below rounding, the pass column and the exit code must agree.
    for args in [
        &["verify", "eigen28", "--field", "identity.json", "--t", "1", "--k", "3", "--tol", "1e-300"][..],
        &["verify", "lemma1", "--field", "identity.json", "--d", "2", "--tol", "1e-300"][..],
    ] {
        let o = run(args);
        let all = column(&stdout(&o), "pass").iter().all(|p| p == "true");
        assert_eq!(o.status.code(), Some(if all { 0 } else { 1 }), "{args:?}");
    }
}

#[test]
fn verify_theorem2_laplacian() {
    let o = run(&["verify", "theorem2", "--field", "identity.json", "--d", "20", "--skip-numerics"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let checks = column(&text, "check");
    let i = checks.iter().position(|c| c == "theorem2_dim_sum").unwrap();
    assert_eq!((floats(&text, "lhs")[i], floats(&text, "rhs")[i]), (440.0, 576.0));
}

#[test]
fn verify_growth_and_integrated() {
    let o = run(&["verify", "growth21", "--field", "identity.json", "--d", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let slope = floats(&stdout(&o), "lhs")[0];
    assert!((slope - 12.0).abs() < 0.05, "slope {slope}");

    let o = run(&["verify", "integrated", "--field", "identity.json", "--d", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // ∫ t Σ√η dt/t = 2 ln 2 against 2·2 ln 2 for the two linear functions.
    let text = stdout(&o);
    let (lhs, rhs) = (floats(&text, "lhs")[0], floats(&text, "rhs")[0]);
    assert!((lhs - 2.0 * 2f64.ln()).abs() < 1e-2 && (rhs - 4.0 * 2f64.ln()).abs() < 1e-2, "{lhs} {rhs}");
}

#[test]
fn spectrum_of_unit_circle() {
    let o = run(&["spectrum", "--field", "identity.json", "--t", "1", "--m", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let eta = floats(&stdout(&o), "eta");
    for (got, want) in eta.iter().zip([0.0, 1.0, 1.0, 4.0, 4.0]) {
        assert!((got - want).abs() < 1e-3, "{eta:?}");
    }
}

#[test]
fn profile_of_conic_decay() {
    let o = run(&["profile", "--field", "conic_decay.json", "--r", "4", "--points", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let r = floats(&text, "r");
    let lo = floats(&text, "lambda_r");
    let hi = floats(&text, "Lambda_r");
    for i in 0..r.len() {
        assert_eq!(lo[i], 1.0);
        assert!((hi[i] - (1.0 + (-r[i]).exp())).abs() < 1e-12);
    }
    assert!(column(&text, "provenance").iter().all(|p| p == "analytic tail"));
}

#[test]
fn solve_transmission_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", "--field", "radial_step.json", "--trace", "x", "--r", "1", "--h", "0.02", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let value = floats(&stdout(&o), "value")[0];
    assert!((value - 4.0 / 13.0).abs() < 2e-3, "probe {value}");
    for f in ["solution_vertices.csv", "solution_triangles.csv", "solution.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let vertices = fs::read_to_string(dir.path().join("solution_vertices.csv")).unwrap();
    assert!(vertices.starts_with("index,x,y,boundary,value\n"));
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_reproducible() {
    for args in [
        &["dims", "--field", "checkerboard.json", "--d", "2"][..],
        &["verify", "lemma1", "--field", "radial_step.json", "--d", "2", "--seed", "3"][..],
        &["verify", "theorem2", "--field", "diag_1_4.json", "--d", "3"][..],
    ] {
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut full = args.to_vec();
                full.extend(["--out", dir.path().to_str().unwrap()]);
                let o = run(&full);
                assert!(o.status.success(), "{args:?}: {}", stderr(&o));
                (stdout(&o), artifacts(dir.path()))
            })
            .collect();
        assert!(!runs[0].1.is_empty());
        assert_eq!(runs[0], runs[1], "{args:?}");
    }
}

#[test]
fn reports_are_json_with_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["dims", "--field", "diag_1_2.json", "--d", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["dims"].as_array().unwrap().len(), 3);
    assert!(text.contains("e0") || text.contains("e-") || text.contains("e1"));
}

#[test]
fn thread_count_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_lharmonic"))
        .args(["dims", "--field", "identity.json", "--d", "1"])
        .env("LHARMONIC_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_lharmonic"))
        .args(["dims", "--field", "identity.json", "--d", "1"])
        .env("LHARMONIC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
