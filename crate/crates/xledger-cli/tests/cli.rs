//! End-to-end tests of the `xledger` binary: exit codes, CSV schema, the
//! seed environment override, and trace dumps.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xledger"))
}

fn write_tmp(name: &str, content: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("xledger-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_happy_path_emits_csv_rows_and_exit_zero() {
    let cfg = write_tmp("ok.json", r#"{"k": 3, "n": 4, "f": 1, "seed": 7}"#);
    let out = bin().args(["run", "--config"]).arg(&cfg).args(["--txns", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4); // header + 3 protocols
    assert!(lines[0].starts_with("protocol,k,n,f,txn_count"));
    assert!(lines[1].starts_with("XLPN22,3,4,1,1,5,237,5,12,0,7"));
}

#[test]
fn single_ledger_config_exits_2() {
    let cfg = write_tmp("k1.json", r#"{"k": 1, "n": 4, "f": 1}"#);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k"));
}

#[test]
fn unknown_config_key_exits_2() {
    let cfg = write_tmp("unknown.json", r#"{"k": 2, "n": 4, "bogus": true}"#);
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_2() {
    let out = bin().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ring_timelock_breach_is_reported_as_safety_failure_with_exit_3() {
    // crash ledger 1's primary right when it must send the last backward
    // hop: ledger 1 has already finalized COMMIT while ledger 0 times out
    // and reclaims, so honest nodes split and the run must exit 3
    let cfg = write_tmp(
        "timelock.json",
        r#"{
            "k": 2, "n": 4, "f": 1,
            "fault_plan": {
                "crash_at": [{"node": {"ledger": 1, "rank": 0}, "round": 16}]
            }
        }"#,
    );
    let out = bin()
        .args(["--protocol", "podc18", "run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("safety violation"));
}

#[test]
fn env_seed_overrides_flag() {
    let cfg = write_tmp("seed.json", r#"{"k": 2, "n": 4, "seed": 1}"#);
    let out = bin()
        .args(["--protocol", "xlpn22", "--seed", "5", "run", "--config"])
        .arg(&cfg)
        .env("XLEDGER_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().ends_with(",99"), "{text}");
}

#[test]
fn trace_dump_is_written_for_single_protocol_runs() {
    let cfg = write_tmp("trace.json", r#"{"k": 2, "n": 4}"#);
    let trace = std::env::temp_dir().join(format!("xledger-trace-{}.tsv", std::process::id()));
    let out = bin()
        .args(["--protocol", "xlpn22", "run", "--config"])
        .arg(&cfg)
        .args(["--trace"])
        .arg(&trace)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let dump = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(dump.lines().count(), 157); // total messages at k=2, n=4
    assert!(dump.lines().all(|l| l.split('\t').count() == 5));
}

#[test]
fn verify_complexity_small_grid_exits_zero() {
    let out = bin().args(["verify-complexity", "--k", "2", "--n", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("| XLPN22 | 2 | 4 | 5 | 157 |"));
    assert!(text.contains("DOCUMENTED_DELTA"));
}

#[test]
fn bench_node_grid_has_12_rows() {
    let outdir = std::env::temp_dir().join(format!("xledger-bench-{}", std::process::id()));
    let out = bin()
        .args(["--seed", "1", "bench", "--grid", "node", "--scale-to", "4", "--out"])
        .arg(&outdir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(outdir.join("bench_node.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12); // 3 protocols x 4 n-values
    let svg = std::fs::read_to_string(outdir.join("bench_node.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn bench_txn_grid_single_protocol_has_6_rows() {
    let outdir = std::env::temp_dir().join(format!("xledger-bench-txn-{}", std::process::id()));
    let out = bin()
        .args(["--protocol", "xlpn22", "--seed", "1", "bench", "--grid", "txn", "--scale-to", "8", "--out"])
        .arg(&outdir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(outdir.join("bench_txn.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn unknown_grid_exits_2() {
    let out = bin().args(["bench", "--grid", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_out_dir_exits_4() {
    let out = bin()
        .args(["bench", "--grid", "ledger", "--scale-to", "1", "--out", "/dev/null/nested"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ledgers_per_txn_policy_is_accepted_and_validated() {
    let cfg = write_tmp("policy.json", r#"{"k": 4, "n": 4}"#);
    let ok = bin()
        .args(["--protocol", "xlpn22", "run", "--config"])
        .arg(&cfg)
        .args(["--txns", "2", "--ledgers-per-txn", "2:4"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let bad = bin()
        .args(["--protocol", "xlpn22", "run", "--config"])
        .arg(&cfg)
        .args(["--ledgers-per-txn", "2:9"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
