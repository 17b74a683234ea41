use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn boxavg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxavg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("BOXAVG_OUT")
        .output()
        .expect("binary runs")
}

fn report(out: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join(format!("{command}.json"))).unwrap()).unwrap()
}

#[test]
fn same_seed_gives_identical_json() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "9", "converge", "--family", "diagonal", "--K", "500", "--samples", "20"];
    assert_eq!(boxavg(a.path(), &args).status.code(), Some(0));
    assert_eq!(boxavg(b.path(), &args).status.code(), Some(0));
    let ja = fs::read(a.path().join("converge.json")).unwrap();
    let jb = fs::read(b.path().join("converge.json")).unwrap();
    assert_eq!(ja, jb);
    let r = report(a.path(), "converge");
    assert_eq!(r["seed"], 9);
    assert_eq!(r["passed"], true);
}

#[test]
fn successful_runs_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["cones", "--family", "linear:r=2", "--K", "50"][..],
        &["verdict", "--family", "linear:r=1", "--K", "500"],
        &["tower", "--theta", "golden", "--N", "5"],
        &["sweepout", "--family", "squares_unit", "--K", "100", "--p", "1", "--samples", "200"],
        &["submanifold"],
    ] {
        let o = boxavg(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(report(dir.path(), args[0])["command"], args[0]);
    }
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = boxavg(
        dir.path(),
        &["converge", "--family", "squares_unit", "--K", "200", "--tolerance", "0.01", "--samples", "20"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(report(dir.path(), "converge")["passed"], false);
}

#[test]
fn bad_config_exits_three_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 3\n\n[cones]\nfamliy = \"sqrt\"\n").unwrap();
    let o = boxavg(dir.path(), &["--config", cfg.to_str().unwrap(), "cones"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn bad_parameters_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(boxavg(dir.path(), &["tower", "--theta", "1/2", "--N", "3"]).status.code(), Some(3));
    assert_eq!(boxavg(dir.path(), &["nonsense"]).status.code(), Some(3));
    assert_eq!(boxavg(dir.path(), &["cones", "--family", "nope"]).status.code(), Some(3));
}

#[test]
fn csv_outputs_have_headers() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(boxavg(dir.path(), &["cones", "--family", "sqrt", "--K", "100"]).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("cones.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("alpha,lambda,size,ratio"), "{header}");
    assert!(csv.lines().count() > 1);
}

#[test]
fn config_file_is_honored_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 42\n\n[cones]\nfamily = \"sqrt\"\nk = 77\n").unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(boxavg(dir.path(), &["--config", c, "cones"]).status.code(), Some(0));
    let r = report(dir.path(), "cones");
    assert_eq!(r["seed"], 42);
    assert_eq!(r["config"]["family"], "sqrt");
    assert_eq!(r["config"]["k"], 77);
    assert_eq!(boxavg(dir.path(), &["--config", c, "cones", "--K", "12"]).status.code(), Some(0));
    assert_eq!(report(dir.path(), "cones")["config"]["k"], 12);
}
