use std::process::{Command, Output};
use std::time::Duration;

use clap::Parser;
use crystalline_harness::bench::parse_csv;
use crystalline_harness::bench_cli::BenchArgs;
use crystalline_harness::{DsKind, SchemeKind, Workload};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smr-bench")).args(args).output().unwrap()
}

fn verify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smr-verify")).args(args).output().unwrap()
}

#[test]
fn bench_defaults() {
    let cells = BenchArgs::try_parse_from(["smr-bench"]).unwrap().cells().unwrap();
    let schemes: Vec<SchemeKind> = cells.iter().map(|c| c.scheme).collect();
    assert_eq!(schemes, SchemeKind::ALL);
    for c in cells {
        assert_eq!((c.ds, c.workload), (DsKind::HashMap, Workload::Write));
        assert_eq!((c.prefill, c.key_range, c.repeats), (50_000, 100_000, 5));
        assert_eq!(c.duration, Duration::from_secs(10));
        assert_eq!((c.epoch_freq, c.retire_freq, c.max_idx, c.max_tries), (110, 120, 3, 16));
    }
}

#[test]
fn bench_lists_expand_to_cells() {
    let a = BenchArgs::try_parse_from([
        "smr-bench",
        "--scheme",
        "ebr,crystalline-l",
        "--ds",
        "stack,list",
        "--threads",
        "1,2",
    ])
    .unwrap();
    assert_eq!(a.cells().unwrap().len(), 8);
}

#[test]
fn bench_config_errors_exit_2() {
    for args in [
        &["--prefill", "10", "--key-range", "5"][..],
        &["--scheme", "nope"],
        &["--ds", "stack", "--workload", "read"],
        &["--scheme", "broken"],
        &["--max-idx", "1"],
        &["--epoch-freq", "0"],
        &["--duration", "0"],
        &["--threads", "x"],
    ] {
        let out = bench(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn bench_writes_csv() {
    let path = std::env::temp_dir().join(format!("cli-test-{}.csv", std::process::id()));
    let out = bench(&[
        "--scheme",
        "crystalline-w,ebr",
        "--ds",
        "stack",
        "--threads",
        "2",
        "--duration",
        "0.1",
        "--repeats",
        "2",
        "--prefill",
        "100",
        "--key-range",
        "1000",
        "--seed",
        "9",
        "--csv",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).unwrap();
    let schemes: Vec<_> = rows.iter().map(|r| (r.scheme, r.seed)).collect();
    assert_eq!(schemes, [(SchemeKind::Ebr, 9), (SchemeKind::CrystallineW, 9)]);
    assert!(rows.iter().all(|r| r.throughput_ops_s > 0.0));
}

#[test]
fn verify_canary_passes_and_flags_broken() {
    let ok = verify(&["--suite", "canary", "--scheme", "crystalline-w,hyaline1", "--ops", "20000"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6);

    let bad = verify(&["--suite", "canary", "--scheme", "broken", "--ds", "stack", "--ops", "50000"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).starts_with("FAIL"));
    assert!(!bad.stderr.is_empty());
}

#[test]
fn verify_stall_and_schedules() {
    let out = verify(&["--suite", "stall", "--scheme", "crystalline-l,ebr", "--ops", "20000", "--runs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = verify(&["--suite", "schedules", "--threads", "2", "--schedules", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_usage_errors_exit_2() {
    for args in [
        &["--suite", "schedules", "--threads", "4"][..],
        &["--suite", "stall", "--scheme", "broken"],
        &["--suite", "canary", "--ds", "tree"],
        &["--suite", "nothing"],
    ] {
        assert_eq!(verify(args).status.code(), Some(2), "{args:?}");
    }
}
