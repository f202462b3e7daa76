use std::path::PathBuf;
use std::process::Command;

fn mvx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvx"))
}

fn suite(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/suite").join(file)
}

#[test]
fn clean_run_exits_zero_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = mvx()
        .args(["run", "--rsm", "--sr", "--repeat", "2", "--scenario"])
        .arg(suite("open.mvx"))
        .arg("--policy")
        .arg(suite("../default.policy"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 3);
}

#[test]
fn divergence_exits_two() {
    let o = mvx()
        .args(["run", "--rsm", "--attack", "1@3:extra:mprotect", "--scenario"])
        .arg(suite("open.mvx"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("divergence"));
}

#[test]
fn conflicting_options_are_usage_errors() {
    let o = mvx().args(["run", "--sr", "--scenario"]).arg(suite("open.mvx")).output().unwrap();
    assert_eq!(o.status.code(), Some(64));
    let o = mvx().args(["run", "--attack", "5@1:skip", "--scenario"]).arg(suite("open.mvx")).output().unwrap();
    assert_eq!(o.status.code(), Some(64));
    let o = mvx().args(["run", "--ssm", "--rsm", "--scenario"]).arg(suite("open.mvx")).output().unwrap();
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn bench_passes_on_the_bundled_suite() {
    let o = mvx().args(["bench", "--suite"]).arg(suite("")).output().unwrap();
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{table}");
    assert!(!table.contains("VIOLATION"));
}
