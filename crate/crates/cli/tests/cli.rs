use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_coop-privacy");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("COOP_PRIVACY_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const SMALL_MD: &str = r#"{
    "environment": {"kind": "sysadmin", "initial_config": [2, 1, 1, 1]},
    "synthesis": {"delta": 0.001, "beta": 0.1, "max_ccp_iters": 5},
    "evaluation": {"rollouts": 200}
}"#;

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn pipeline_outputs_are_hashed_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "md.json", SMALL_MD);
    for out in ["a", "b"] {
        let steps: [&[&str]; 4] = [
            &["synthesize", "--config", "md.json", "--out", out],
            &["evaluate", "--config", "md.json", "--policy", &format!("{out}/policy.json"), "--out", out],
            &["bounds", "--config", "md.json", "--policy", &format!("{out}/policy.json"), "--out", out],
            &["verify-dp", "--config", "md.json", "--out", out],
        ];
        for args in steps {
            let o = run(args, dir);
            assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    for name in ["iterations.csv", "occupancy.csv", "evaluation.csv", "bounds.csv", "dp.csv", "policy.json"] {
        let a = read(dir.join("a").join(name));
        assert_eq!(a, read(dir.join("b").join(name)), "{name} differs between runs");
        assert!(!a.contains('\r'));
        if name.ends_with(".csv") {
            assert!(a.starts_with("# config_hash="), "{name}");
        }
    }
    let iterations = read(dir.join("a/iterations.csv"));
    let mut lines = iterations.lines().skip(1);
    assert_eq!(lines.next(), Some("iter,objective,v,l,C,status,inner_iters,wall_ms"));
    assert_eq!(lines.count(), 6);
    assert!(iterations.lines().skip(2).all(|l| l.ends_with(",0")));
    // Truthful plus the three default privacy levels.
    assert_eq!(read(dir.join("a/evaluation.csv")).lines().count(), 2 + 4);
    assert_eq!(read(dir.join("a/bounds.csv")).lines().count(), 2 + 3);
}

#[test]
fn zero_weights_give_the_baseline() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "base.json",
        r#"{"environment": {"kind": "sysadmin", "initial_config": [0, 0, 1, 1]}}"#,
    );
    let o = run(&["synthesize", "--config", "base.json", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 0);
    let log = read(tmp.path().join("o/iterations.csv"));
    let last = log.lines().last().unwrap();
    let v: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!((v - 1.0).abs() < 1e-6, "{last}");
}

#[test]
fn output_directory_comes_from_the_config_when_not_flagged() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "c.json",
        r#"{"environment": {"kind": "sysadmin", "initial_config": [2, 1, 1, 1]}, "output_dir": "from_config"}"#,
    );
    assert_eq!(code(&run(&["verify-dp", "--config", "c.json"], tmp.path())), 0);
    assert!(tmp.path().join("from_config/dp.csv").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write_config(dir, "md.json", SMALL_MD);
    write_config(
        dir,
        "bad.json",
        r#"{"environment": {"kind": "sysadmin", "initial_config": [2, 1, 1, 1]}, "privacy": {"epsilons": [-1.0]}}"#,
    );
    write_config(dir, "unknown.json", r#"{"environment": {"kind": "sysadmin", "initial_config": [1]}, "x": 1}"#);
    write_config(
        dir,
        "huge.json",
        r#"{"environment": {"kind": "sysadmin", "initial_config": [2, 1, 1, 1]}, "dp": {"horizon": 60}}"#,
    );
    let cases: [(&[&str], i32); 6] = [
        (&["synthesize", "--config", "missing.json"], 2),
        (&["verify-dp", "--config", "bad.json"], 2),
        (&["verify-dp", "--config", "unknown.json"], 2),
        (&["evaluate", "--config", "md.json", "--policy", "missing.json"], 2),
        (&["verify-dp", "--config", "huge.json"], 3),
        (&["reproduce", "--figure", "fig9"], 2),
    ];
    for (args, expected) in cases {
        let o = run(args, dir);
        assert_eq!(code(&o), expected, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}
