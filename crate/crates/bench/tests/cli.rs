use std::path::Path;
use std::process::{Command, Output};

fn qllm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qllm")).args(args).arg("--out-dir").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL: &str = "schema_version = 1
[engine]
local_window = 64
block_size = 16
blocks_per_lookup = 4
chunk_size = 32
[workload]
kind = \"planted-needle\"
context_length = 1088
needle_depth = 0.3
needle_alignment = 0.9
";

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = qllm(&["run", "--config", config.to_str().unwrap(), "--beta", "4", "--seed", "2"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("qllm"));
    for f in ["metrics.json", "trace.jsonl", "timings.json", "heatmap-000.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["engine"]["beta"], 4.0);
    assert_eq!(metrics["workload"]["seed"], 2);
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nunknown = 3\n").unwrap();
    for args in [
        vec!["run", "--config", bad.to_str().unwrap()],
        vec!["run", "--config", "/nonexistent/config.toml"],
        vec!["run", "--policy", "nope"],
        vec!["run", "--policy", "local-only", "--beta", "1"],
        vec!["run", "--beta", "-1"],
        vec!["sweep", "--axis", "gamma=1,2"],
        vec!["run", "--no-such-flag"],
    ] {
        let o = qllm(&args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(code(&qllm(&["--help"], dir.path())), 0);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = qllm(&["oracle-check", "--quick"], &blocker.join("sub"));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_check_quick_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = qllm(&["oracle-check", "--quick"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("oracle_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 5);
}

#[test]
fn dumped_weights_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let o = qllm(&["dump-weights", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let o = qllm(&["--weights", path.to_str().unwrap(), "oracle-check", "--quick"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&path, b"garbage").unwrap();
    let o = qllm(&["--weights", path.to_str().unwrap(), "oracle-check", "--quick"], dir.path());
    assert_eq!(code(&o), 1);
}
