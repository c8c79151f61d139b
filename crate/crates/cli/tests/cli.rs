use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Duration;

use interview_match::deviation::DEVIATION_CSV_HEADER;
use interview_match::metrics::CSV_HEADER;
use interview_match_cli::campaign::Failure;
use interview_match_cli::CampaignReport;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interview-match")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const GRID: &str = r#"{"n_doctors": 60, "capacity": 3, "k": [2, 4], "cone_override": 0.15,
                       "setting": ["Residency", "SchoolChoice", "RequestInterview"], "runs": 3}"#;

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn identical_flags_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), GRID);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = cli(&["--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap(), "--deviations", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ca, cb) = (csvs(&a), csvs(&b));
    assert_eq!(ca.len(), 12);
    assert_eq!(ca, cb);
    let metrics = String::from_utf8(ca.iter().find(|(n, _)| !n.contains("deviation")).unwrap().1.clone()).unwrap();
    assert_eq!(metrics.lines().next(), Some(CSV_HEADER));
    assert!(metrics.lines().nth(1).unwrap().ends_with(",7"));
    let dev = String::from_utf8(ca.iter().find(|(n, _)| n.contains("deviation")).unwrap().1.clone()).unwrap();
    assert_eq!(dev.lines().next(), Some(DEVIATION_CSV_HEADER));
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("record=config")).count(), 6);
    assert!(summary.lines().last().unwrap().starts_with("record=campaign configs=6 failures=0 status=ok"));
}

#[test]
fn different_seeds_differ() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"n_doctors": 60, "capacity": 3, "k": 3, "cone_override": 0.15, "runs": 2}"#);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli(&["--config", &cfg, "--seed", "1", "--out", a.to_str().unwrap()]);
    cli(&["--config", &cfg, "--seed", "2", "--out", b.to_str().unwrap()]);
    assert_ne!(csvs(&a)[0].1, csvs(&b)[0].1);
}

#[test]
fn verify_only_audits_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = cli(&["--verify-only", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for check in ["audit.stability=", "audit.oracle=", "audit.rural=", "audit.uniqueness=", "audit.dominance="] {
        assert!(stdout.contains(check), "{check} missing from {stdout}");
    }
    assert!(stdout.contains("status=ok"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), r#"{"n_doctors": 10, "capacity": 1, "k": 2, "colour": "red"}"#);
    assert_eq!(cli(&["--config", &unknown]).status.code(), Some(2));
    let bad = write_config(tmp.path(), r#"{"n_doctors": 10, "capacity": 5, "k": 3}"#);
    assert_eq!(cli(&["--config", &bad]).status.code(), Some(2));
    assert_eq!(cli(&["--config", "/nonexistent/config.json"]).status.code(), Some(2));
    assert_eq!(cli(&[]).status.code(), Some(2));
    assert_eq!(cli(&["--preset", "nope"]).status.code(), Some(2));
    assert_eq!(cli(&["--preset", "school", "--audit-sample", "-1"]).status.code(), Some(2));
}

#[test]
fn failures_are_reported_by_triple() {
    let r = CampaignReport {
        configs: Vec::new(),
        failures: vec![Failure { config: 3, run: 17, check: "stability" }],
        wall: Duration::ZERO,
    };
    assert!(!r.passed());
    let s = r.summary();
    assert!(s.contains("record=failure config=3 run=17 check=stability"));
    assert!(s.contains("status=audit_failure"));
}

#[test]
fn preset_runs_with_few_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    let o = cli(&["--preset", "paper-500", "--runs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = csvs(&out).into_iter().map(|c| c.0).collect();
    assert_eq!(names, vec!["000_residency_n500_k5_kappa5_seed0.csv", "001_residency_n500_k12_kappa5_seed0.csv"]);
}
