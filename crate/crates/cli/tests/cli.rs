use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fdmac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdmac"))
        .args(args)
        .output()
        .expect("spawn fdmac")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

const SCENARIO: &str = "\
[run]
seed = 9
duration_us = 100000
repeats = 3

[topology]
nodes = 2
edges = clique

[traffic]
0 = saturated dest=1 bytes=500
1 = saturated dest=0 bytes=500
";

#[test]
fn run_writes_one_row_per_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("s.scn");
    let csv = dir.path().join("out.csv");
    fs::write(&scn, SCENARIO).unwrap();
    let out = fdmac(&["run", path_str(&scn), "--out", path_str(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("seed,duration_us,"));
    let seeds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["9", "10", "11"]);
}

#[test]
fn flags_override_seed_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("s.scn");
    fs::write(&scn, SCENARIO).unwrap();
    let out = fdmac(&["run", path_str(&scn), "--seed", "40", "--repeats", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("40,100000,"));
}

#[test]
fn golden_csv_for_fixed_seed() {
    let out = fdmac(&["run", path_str(&fixture("golden.scn"))]);
    assert!(out.status.success());
    let want = fs::read_to_string(fixture("golden.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), want);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    fs::write(&scn, SCENARIO.replace("repeats = 3", "repeets = 3")).unwrap();
    let out = fdmac(&["run", path_str(&scn)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("repeets"), "{err}");
    assert!(err.contains("line 4, column 1"), "{err}");
}

#[test]
fn bad_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    fs::write(&scn, SCENARIO.replace("edges = clique", "edges = 0-7")).unwrap();
    let out = fdmac(&["run", path_str(&scn)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_an_error() {
    let out = fdmac(&["run", "/nonexistent/scenario.scn"]);
    assert!(!out.status.success());
}

#[test]
fn trace_has_header_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("s.scn");
    let trace = dir.path().join("trace.csv");
    fs::write(&scn, SCENARIO).unwrap();
    let out = fdmac(&["run", path_str(&scn), "--trace", path_str(&trace)]);
    assert!(out.status.success());
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_us,node,event,detail"));
    assert!(text.contains(",tx_start,id="));
    assert!(text.contains("dup=FD"));
}

#[test]
fn version_flag() {
    let out = fdmac(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("fdmac "), "{text}");
}

#[test]
fn paper_hidden_injection_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdmac(&["paper", "hidden-injection", "--out-dir", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("experiment,check,result,detail"));
    assert!(!summary.contains(",FAIL,"), "{summary}");
    assert!(dir.path().join("hidden-injection.csv").exists());
}

#[test]
fn paper_rejects_unknown_experiment() {
    let out = fdmac(&["paper", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_scenarios_run() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "scn") {
            let out = fdmac(&["run", path_str(&p), "--repeats", "1"]);
            assert!(out.status.success(), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
            n += 1;
        }
    }
    assert!(n >= 3);
}
