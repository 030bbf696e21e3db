use std::path::Path;
use std::process::{Command, Output};

fn xtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xtrace")).args(args).output().unwrap()
}

fn with_out(args: &[&str], out: &Path) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    full.push("--out");
    full.push(out.to_str().unwrap());
    xtrace(&full)
}

/// Parses the single data row printed by `estimate` into (column, value) pairs.
fn estimate_fields(output: &Output) -> Vec<(String, String)> {
    let text = String::from_utf8(output.stdout.clone()).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let values: Vec<String> = lines.next().unwrap().split(',').map(str::to_owned).collect();
    header.into_iter().zip(values).collect()
}

fn field<'a>(fields: &'a [(String, String)], name: &str) -> &'a str {
    &fields.iter().find(|(k, _)| k == name).unwrap().1
}

#[test]
fn estimate_reports_matvecs() {
    let out = xtrace(&["estimate", "--spectrum", "flat", "--n", "100", "--m", "2", "--estimator", "xtrace-full", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fields = estimate_fields(&out);
    assert_eq!(field(&fields, "matvecs"), "4");
    assert_eq!(field(&fields, "seed"), "1");
    assert!(field(&fields, "estimate").parse::<f64>().unwrap().is_finite());
    assert_eq!(field(&fields, "trace").parse::<f64>().unwrap(), 200.0);
}

#[test]
fn estimate_is_deterministic_per_seed() {
    let args = ["estimate", "--spectrum", "exp:120", "--m", "6", "--k", "5", "--seed", "9"];
    assert_eq!(xtrace(&args).stdout, xtrace(&args).stdout);
}

#[test]
fn estimate_rejects_small_step_spectrum() {
    let out = xtrace(&["estimate", "--spectrum", "step", "--n", "40", "--m", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn estimate_identity_override_is_exact() {
    let out = xtrace(&["estimate", "--spectrum", "flat", "--n", "300", "--m", "8", "--identity-override"]);
    assert_eq!(out.status.code(), Some(0));
    let fields = estimate_fields(&out);
    assert!(field(&fields, "rel_err").parse::<f64>().unwrap() <= 1e-10);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(xtrace(&["estimate", "--spectrum", "flat", "--m", "0"]).status.code(), Some(2));
    assert_eq!(xtrace(&["bench", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(xtrace(&["bench", "--trials", "-3"]).status.code(), Some(2));
    assert_eq!(xtrace(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        xtrace(&["estimate", "--spectrum", "poly:50", "--n", "60", "--m", "2"]).status.code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_exits_one() {
    let out = xtrace(&["fig1", "--out", "/nonexistent-dir/fig1.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent-dir/fig1.csv"));
}

#[test]
fn bench_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = ["bench", "--spectrum", "poly:80,exp:80", "--m", "2,4", "--k", "3", "--trials", "10", "--seed", "7"];
    assert!(with_out(&args, &a).status.success());
    let run_b = with_out(&args, &b);
    assert!(run_b.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let summary = String::from_utf8(run_b.stderr).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains("rows")).count(), 2);

    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("spectrum,N,m,matvecs,estimator,k,trials,rms_rel_err,mean_estimate,std_error\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 5);
}

#[test]
fn bench_step_spectrum_captures_plateau() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("step.csv");
    let out = with_out(&["bench", "--spectrum", "step", "--m", "60", "--trials", "50"], &path);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let row = reader
        .records()
        .map(Result::unwrap)
        .find(|r| &r[4] == "xtrace-full")
        .unwrap();
    assert_eq!(&row[1], "1000");
    assert_eq!(&row[3], "120");
    assert!(row[7].parse::<f64>().unwrap() < 1e-8);
}

#[test]
fn fig1_output_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(with_out(&["fig1"], &a).status.success());
    assert!(with_out(&["fig1", "--seed", "123"], &b).status.success());
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert_eq!(text.lines().count(), 66);
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 115.0 / 6.0).abs() <= 1e-10);
    assert!((first[2] - 17.5).abs() <= 1e-10);
}

#[test]
fn check_passes_on_fresh_build() {
    let out = xtrace(&["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + 5);
    assert!(!table.contains("FAIL"));
}

#[test]
fn check_with_monte_carlo() {
    let out = xtrace(&["check", "--mc", "--samples", "100000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 7);
}
