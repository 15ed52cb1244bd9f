use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carnot-lab")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path, stem: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.manifest.json"))).unwrap()).unwrap()
}

#[test]
fn group_certify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["run", "group-certify", "--trials", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(dir.path(), "group_certify");
    assert_eq!(m["status"], "pass");
    assert_eq!(m["seed"], 0);
    assert!(dir.path().join("group_certify.csv").exists());
}

#[test]
fn unknown_flag_and_experiment_are_config_errors() {
    assert_eq!(code(&lab(&["run", "blowup", "--bogus"])), 3);
    assert_eq!(code(&lab(&["run", "nonsense"])), 3);
    assert_eq!(code(&lab(&["run"])), 3);
    assert_eq!(code(&lab(&["run", "blowup", "--levels", "9..4"])), 3);
}

#[test]
fn invalid_drift_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["run", "adapted-equality", "--drift", "wiggle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("wiggle"));
}

#[test]
fn domain_error_leaves_failure_record() {
    let dir = tempfile::tempdir().unwrap();
    // two levels are too few to fit a growth exponent
    let o = lab(&["run", "blowup", "--levels", "4..5", "--trials", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let m = manifest(dir.path(), "blowup");
    assert_eq!(m["status"], "error");
    assert_eq!(m["exit_code"], 3);
}

#[test]
fn assertion_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // alpha = 1000 shrinks the transport bound far below any empirical W2
    let o = lab(&["run", "marginal-t2", "--trials", "32", "--alpha", "1000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(dir.path(), "marginal_t2");
    assert_eq!(m["status"], "fail");
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("out");
    fs::write(&cfg, format!(r#"{{"experiment":"adapted-equality","seed":1,"output_dir":{:?},"overrides":{{"trials":100}}}}"#, out)).unwrap();
    let o = lab(&["run", "--config", cfg.to_str().unwrap(), "--drift", "line", "--quiet"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let m = manifest(&out, "adapted_equality");
    assert_eq!(m["config"]["overrides"]["drift"], "line");
    assert_eq!(m["config"]["overrides"]["trials"], 100);
}

#[test]
fn thread_count_does_not_change_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(t);
        let o = lab(&["run", "recovery", "--levels", "3..5", "--trials", "8", "--seed", "5", "--threads", t, "--quiet", "--out", out.to_str().unwrap()]);
        assert!(matches!(code(&o), 0 | 2));
        outputs.push(fs::read(out.join("recovery.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn list_names_every_experiment() {
    let o = lab(&["list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 10);
    assert!(text.contains("riemann-noblowup"));
}
