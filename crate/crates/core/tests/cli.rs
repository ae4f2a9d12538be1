use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn swnet(args: &[&str], stdin: Option<&str>) -> Output {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new(env!("CARGO_BIN_EXE_swnet"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    if let Some(text) = stdin {
        child.stdin.as_mut().unwrap().write_all(text.as_bytes()).unwrap();
    }
    drop(child.stdin.take());
    child.wait_with_output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn analyze_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = swnet(
        &["analyze", "-", "--out", out.to_str().unwrap()],
        Some(r#"{"preset":"ex2","lambda":["1/2","1"],"experiment":{"kind":"analyze"}}"#),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("analysis.json"));
    assert_eq!(doc["load"]["primal_value"], "1");
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "analyze");
    assert_eq!(manifest["files"][0]["file"], "analysis.json");
}

#[test]
fn schema_errors_exit_one_with_pointer() {
    let o = swnet(&["analyze", "-"], Some(r#"{"preset":"ex2","experiment":{"kind":"analyze","bogus":1}}"#));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/experiment"));
}

#[test]
fn command_must_match_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let o = swnet(
        &["fluid", "-", "--out", dir.path().to_str().unwrap()],
        Some(r#"{"preset":"ex2","experiment":{"kind":"analyze"}}"#),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupted_fixture_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = swnet(
        &["simulate", "-", "--out", run.to_str().unwrap()],
        Some(r#"{"preset":"ex2","lambda":[0.5,1],"arrivals":{"kind":"bernoulli"},"experiment":{"kind":"simulate","horizon":30}}"#),
    );
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(run.join("path_rep0.csv")).unwrap();
    let bad: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 5 {
                let mut cells: Vec<&str> = l.split(',').collect();
                cells[1] = "-4";
                cells.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    let fixture = dir.path().join("bad.csv");
    fs::write(&fixture, bad.join("\n") + "\n").unwrap();
    let scenario = format!(
        r#"{{"preset":"ex2","experiment":{{"kind":"simulate","horizon":30,"audit_fixture":{}}}}}"#,
        serde_json::to_string(fixture.to_str().unwrap()).unwrap()
    );
    let audit = dir.path().join("audit");
    let o = swnet(&["simulate", "-", "--out", audit.to_str().unwrap()], Some(&scenario));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&audit.join("audit.json"))["audits"][0]["ok"], false);
}

#[test]
fn seed_flag_changes_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"preset":"ex2","lambda":[0.5,1],"arrivals":{"kind":"bernoulli"},"experiment":{"kind":"simulate","horizon":100}}"#;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    swnet(&["simulate", "-", "--out", a.to_str().unwrap(), "--seed", "1"], Some(text));
    swnet(&["simulate", "-", "--out", b.to_str().unwrap(), "--seed", "2"], Some(text));
    assert_ne!(fs::read(a.join("path_rep0.csv")).unwrap(), fs::read(b.join("path_rep0.csv")).unwrap());
    assert_eq!(read_json(&b.join("manifest.json"))["seed"], 2);
}

#[test]
fn shipped_scenarios_run() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(!names.is_empty());
    for path in names {
        let s = swnet::scenario::parse_scenario(&path).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = swnet::exec::execute(&s, dir.path(), None).unwrap();
        assert_eq!(out.exit_code, 0, "{}: {}", path.display(), out.summary);
    }
}

#[test]
fn unknown_preset_and_missing_experiment() {
    let o = swnet(&["analyze", "-"], Some(r#"{"preset":"ring","experiment":{"kind":"analyze"}}"#));
    assert_eq!(o.status.code(), Some(1));
    let o = swnet(&["analyze", "-"], Some(r#"{"preset":"ex2"}"#));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/experiment"));
}
