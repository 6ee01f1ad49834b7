use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use selftrig::config::RunConfig;

fn selftrig(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selftrig")).args(args).current_dir(dir).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const JET_RUN: &str = r#"{
    "system": "jet-engine",
    "sigma": 0.33,
    "policy": {"kind": "self-trigger", "tau_bound": 0.0143},
    "sim": {"t_end": 0.5, "x0": [5.37, 0.34]},
    "output": {"trace": "trace.csv", "metrics": "metrics.json"}
}"#;

#[test]
fn run_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", JET_RUN);
    let out = selftrig(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,u1,V,exec"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 6);
    assert_eq!(first[5], "1");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(m["executions"].as_u64().unwrap() > 0);
    assert_eq!(m["diverged"], false);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", JET_RUN);
    let out = selftrig(&["run", "--config", &cfg, "--print-config"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let echoed = String::from_utf8(out.stdout).unwrap();
    let original = RunConfig::from_json(JET_RUN).unwrap();
    assert_eq!(RunConfig::from_json(&echoed).unwrap(), original);
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &JET_RUN.replace("\"sim\"", "\"simulation\": {}, \"sim\""));
    assert_eq!(selftrig(&["run", "--config", &bad], dir.path()).status.code(), Some(1));
    assert_eq!(selftrig(&["run", "--config", "missing.json"], dir.path()).status.code(), Some(1));
    let out = selftrig(&["tau-star", "--system", "jet-engine", "--sigma", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
    assert_eq!(selftrig(&["tau-star", "--system", "no-such-system"], dir.path()).status.code(), Some(1));
    assert_eq!(selftrig(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(selftrig(&[], dir.path()).status.code(), Some(1));
}

#[test]
fn diverged_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "div.json",
        r#"{"system": {"n": 1, "closed_loop": ["x1^2 + 2*x1*e1 + e1^2"], "lyapunov": "x1^2",
                       "p": 1, "q": 1, "degree": 2, "level": 1},
            "policy": {"kind": "periodic", "period": 0.1},
            "sim": {"t_end": 5.0, "x0": [2.0]}}"#,
    );
    let out = selftrig(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["diverged"], true);
}

#[test]
fn verify_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = selftrig(&["--jobs", "2", "verify", "--system", "rigid-body"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")), "{text}");
    assert!(text.contains("time map identity"));
    let failed = text.lines().any(|l| l.starts_with("FAIL "));
    assert_eq!(out.status.code(), Some(if failed { 2 } else { 0 }));
}

#[test]
fn homogenize_inline_system() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write(
        dir.path(),
        "sys.json",
        r#"{"n": 2, "closed_loop": ["x2", "-x1 - x2^3 - e2"], "lyapunov": "x1^2 + x2^2",
            "p": 1, "q": 1, "degree": 2, "level": 4}"#,
    );
    let out = selftrig(&["homogenize", "--system", &sys], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("l = 3"), "{text}");
    assert!(text.contains("w' = 0"));
}
