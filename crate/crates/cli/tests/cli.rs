//! Command-line behavior: exit codes, table round trips, output formats.

use std::process::{Command, Output};

use ecofair::joint::{batch_to_table, expand_exact};
use ecofair::scenarios::example3;
use ecofair::{PredictionTable, Rational};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecofair"))
        .args(args)
        .output()
        .unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Writes the two phases of the Example-3 ecosystem as prediction tables
/// of 4000 rows per group.
fn tables(dir: &std::path::Path) -> (String, String) {
    let s = example3::<Rational>().unwrap();
    let path = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    let (before, after) = (path("before.csv"), path("after.csv"));
    batch_to_table(&expand_exact(&s.before, 4000).unwrap())
        .write_csv(&before)
        .unwrap();
    batch_to_table(&expand_exact(&s.after(), 4000).unwrap())
        .write_csv(&after)
        .unwrap();
    (before, after)
}

#[test]
fn bad_input_exits_with_two() {
    assert_eq!(
        run(&["analytic", "eoc-corr", "--beta1", "0.1"])
            .status
            .code(),
        Some(2)
    );
    let infeasible = run(&[
        "analytic", "eoc-corr", "--beta1", "0.1", "--beta2", "0.9", "--rho0", "1", "--rho1", "0",
    ]);
    assert_eq!(infeasible.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&infeasible.stderr).starts_with("error: "));
    assert_eq!(
        run(&["simulate", "--scenario", "example2"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["audit", "--table", "/nonexistent.csv"]).status.code(),
        Some(2)
    );
}

#[test]
fn audit_of_an_exact_table_reports_the_exact_levels() {
    let dir = tempfile::tempdir().unwrap();
    let (before, after) = tables(dir.path());
    let b = json(&["audit", "--table", &before]);
    let a = json(&["audit", "--table", &after]);
    assert!(b["levels"]["eoc"].as_f64().unwrap().abs() <= 1e-12);
    assert!((a["levels"]["eoc"].as_f64().unwrap() - 0.075).abs() <= 1e-12);
    assert_eq!(b["rows"], Value::from(8000));
}

#[test]
fn adjusting_writes_an_eo_table_and_leaves_eo_lenders_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (before, after) = tables(dir.path());
    let adjusted = dir.path().join("adjusted.csv");
    let fit = json(&[
        "adjust",
        "--table",
        &before,
        "--lender",
        "1",
        "--adjusted",
        adjusted.to_str().unwrap(),
    ]);
    assert_eq!(fit["identity"], Value::Bool(false));
    let table = PredictionTable::read_csv(&adjusted).unwrap();
    let levels = ecofair::empirical_fairness(&table, ecofair::UtilityKind::at_least_one()).unwrap();
    assert!(levels.eo_per_lender[0] <= 1e-9);
    let already = json(&["adjust", "--table", &after, "--lender", "2"]);
    assert_eq!(already["identity"], Value::Bool(true));
    assert_eq!(
        run(&["adjust", "--table", &after, "--lender", "3"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn csv_format_flattens_nested_fields() {
    let out = run(&[
        "--format",
        "csv",
        "simulate",
        "--scenario",
        "example1",
        "-N",
        "1000",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.split(',').any(|h| h == "exact.eoc"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn verify_reports_every_check_and_fails_at_zero_tolerance() {
    let ok = json(&["verify", "--suite", "frechet"]);
    assert_eq!(ok["passed"], Value::Bool(true));
    let strict = run(&["--tolerance", "0", "verify", "--suite", "frechet"]);
    assert_eq!(strict.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&strict.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(false));
}
