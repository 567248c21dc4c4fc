//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use clap::Parser;
use crystalline::LoopKind;
use crystalline_harness::bench::{parse_csv, run_cell, BenchConfig};
use crystalline_harness::bench_cli::BenchArgs;
use crystalline_harness::explore::{explore, scenarios, ExploreConfig, Strategy, BOUNDED_LOOPS};
use crystalline_harness::lincheck::{check_map, check_within, record_map, record_stack, RecordSpec, StackModel};
use crystalline_harness::stress::{run_canary_stress, run_stall_bound, CanarySpec, StallSpec};
use crystalline_harness::{DsKind, SchemeKind, Workload};

/// Wall-clock limit for one canary cell.
const CELL_LIMIT: Duration = Duration::from_secs(120);
/// Stall runs per scheme for the memory bound.
const STALL_SEEDS: u64 = 20;
/// Operations in each half of a stall run.
const N: u64 = 100_000;
const UNBOUNDED_GROWTH: f64 = 1.5;
const PLATEAU: f64 = 1.1;
const THROUGHPUT_FLOOR: f64 = 0.25;
const W_OVER_L: f64 = 0.85;
const HISTORIES: u64 = 100;
/// Search configurations allowed per history before the check gives up.
const SEARCH_BUDGET: usize = 20_000_000;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn safety() -> Outcome {
    let mut failed = Vec::new();
    let (mut cells, mut slowest) = (0, Duration::ZERO);
    for threads in [4, 8] {
        for scheme in SchemeKind::ALL {
            for ds in DsKind::ALL {
                let t = Instant::now();
                let v = run_canary_stress(&CanarySpec::new(scheme, ds, threads, 100_000, 1)).expect("canary cell");
                let took = t.elapsed();
                slowest = slowest.max(took);
                cells += 1;
                if !v.passed() || took > CELL_LIMIT {
                    failed.push(format!("{v} in {took:.1?}"));
                }
            }
        }
    }
    outcome(
        failed.is_empty(),
        format!(
            "{cells} cells at 4 and 8 threads, 1e5 ops each; slowest {slowest:.1?} (limit {CELL_LIMIT:?}){}",
            failed.iter().map(|f| format!("\n    {f}")).collect::<String>()
        ),
    )
}

fn stall_bound() -> Outcome {
    let (threads, idx, freq) = (4, 2, 8);
    let oracle = |indices: usize| freq * (threads * indices + 1) * (threads * indices + 1);
    let mut pass = true;
    let mut parts = Vec::new();
    for (scheme, indices) in [(SchemeKind::CrystallineL, idx), (SchemeKind::CrystallineW, idx + 2)] {
        let bound = oracle(indices) as u64;
        let mut worst = 0;
        for seed in 1..=STALL_SEEDS {
            let spec = StallSpec::bound_check(scheme, N, seed);
            assert_eq!(spec.config.max_threads, threads);
            assert_eq!(spec.config.max_idx, idx);
            assert_eq!(spec.config.retire_freq, freq);
            pass &= spec.theoretical_bound() == bound;
            worst = worst.max(run_stall_bound(&spec).expect("stall run").peak);
        }
        pass &= worst <= bound;
        parts.push(format!("{scheme} peak {worst} <= {bound}"));
    }
    outcome(pass, format!("{STALL_SEEDS} seeds: {}", parts.join(", ")))
}

fn robustness() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for scheme in [
        SchemeKind::Ebr,
        SchemeKind::Hyaline1,
        SchemeKind::Hyaline1S,
        SchemeKind::CrystallineL,
        SchemeKind::CrystallineW,
    ] {
        let r = run_stall_bound(&StallSpec::bound_check(scheme, N, 1)).expect("stall run");
        let g = r.growth();
        let ok = if scheme.robust() { g <= PLATEAU } else { g >= UNBOUNDED_GROWTH };
        pass &= ok;
        parts.push(format!("{scheme} {}->{} ({g:.2}x)", r.peak_half, r.peak));
    }
    outcome(
        pass,
        format!(
            "peak at N=1e5 -> 2N: {}; need >= {UNBOUNDED_GROWTH} for ebr/hyaline1, <= {PLATEAU} otherwise",
            parts.join(", ")
        ),
    )
}

fn loop_bounds() -> Outcome {
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut max = vec![0; BOUNDED_LOOPS.len()];
    for threads in [2, 3] {
        for (scheme, strategy) in [
            (SchemeKind::CrystallineW, Strategy::Random),
            (SchemeKind::CrystallineW, Strategy::Pct { depth: 3 }),
            (SchemeKind::CrystallineL, Strategy::Random),
        ] {
            let cfg = ExploreConfig { scheme, strategy, schedules: 300, seed: 1, ..ExploreConfig::default() };
            for sc in scenarios(threads) {
                let r = explore(&sc, &cfg).expect("exploration");
                runs += r.schedules;
                for (m, &k) in max.iter_mut().zip(BOUNDED_LOOPS.iter()) {
                    *m = (*m).max(r.loops.get(k));
                }
                if r.loops.get(LoopKind::FullBatchFailures) != 0 || !r.passed() {
                    let why = r.failures.first().map_or("full batch retry".into(), |f| f.reason.clone());
                    failures.push(format!("{scheme} {} ({threads} threads): {why}", r.scenario));
                }
            }
        }
    }
    let loops: Vec<String> = BOUNDED_LOOPS.iter().zip(&max).map(|(k, m)| format!("{k:?}={m}")).collect();
    outcome(
        failures.is_empty(),
        format!(
            "{runs} schedules at max_threads 2 and 3; max iterations {} (at most max_threads failed attempts per loop); full-batch retry failures 0{}",
            loops.join(" "),
            failures.iter().map(|f| format!("\n    {f}")).collect::<String>()
        ),
    )
}

fn bench_protocol() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let cells = BenchArgs::try_parse_from(["smr-bench"]).unwrap().cells().unwrap();
    pass &= cells.len() == SchemeKind::ALL.len();
    for c in &cells {
        let exact = (c.prefill, c.key_range, c.duration, c.repeats) == (50_000, 100_000, Duration::from_secs(10), 5)
            && (c.epoch_freq, c.retire_freq, c.max_tries) == (110, 120, 16);
        pass &= exact;
    }
    notes.push(format!("defaults ok={pass}"));

    let threads = cores().min(8);
    let csv = std::env::temp_dir().join(format!("acceptance-{}.csv", std::process::id()));
    let out = Command::new(env!("CARGO_BIN_EXE_smr-bench"))
        .args(["--ds", "hashmap", "--duration", "1", "--repeats", "1", "--threads"])
        .arg(threads.to_string())
        .arg("--csv")
        .arg(&csv)
        .output()
        .expect("run smr-bench");
    pass &= out.status.success();
    let rows =
        std::fs::read_to_string(&csv).map_err(|e| e.to_string()).and_then(|t| parse_csv(&t).map_err(|e| e.to_string()));
    let _ = std::fs::remove_file(&csv);
    match rows {
        Ok(rows) => {
            pass &= rows.len() == SchemeKind::ALL.len();
            let none = rows.iter().find(|r| r.scheme == SchemeKind::None).map_or(f64::NAN, |r| r.throughput_ops_s);
            for r in rows.iter().filter(|r| r.scheme != SchemeKind::None) {
                let ratio = r.throughput_ops_s / none;
                pass &= ratio >= THROUGHPUT_FLOOR;
                notes.push(format!("{} {:.0}%", r.scheme, 100.0 * ratio));
            }
        }
        Err(e) => {
            pass = false;
            notes.push(format!("csv: {e}"));
        }
    }
    outcome(
        pass,
        format!(
            "hashmap at {threads} threads, share of none's throughput (floor {:.0}%): {}",
            100.0 * THROUGHPUT_FLOOR,
            notes.join(", ")
        ),
    )
}

fn linearizability() -> Outcome {
    let (mut bad, mut gave_up) = (Vec::new(), 0);
    for seed in 0..HISTORIES {
        let spec = RecordSpec::new(seed);
        match check_within(StackModel::default(), &record_stack(&spec).unwrap(), SEARCH_BUDGET) {
            Some(true) => {}
            Some(false) => bad.push(format!("stack seed {seed}")),
            None => gave_up += 1,
        }
        if let Err(k) = check_map(&record_map(&spec).unwrap()) {
            bad.push(format!("map seed {seed} key {k}"));
        }
    }
    outcome(
        bad.is_empty() && gave_up == 0,
        format!(
            "{HISTORIES} stack and {HISTORIES} map histories, 4 threads x 1000 ops; {} violations, {gave_up} undecided {}",
            bad.len(),
            bad.join(", ")
        ),
    )
}

fn w_overhead() -> Outcome {
    let threads = cores().min(8);
    let cell = |scheme| BenchConfig {
        scheme,
        ds: DsKind::List,
        threads,
        workload: Workload::Read,
        duration: Duration::from_secs(1),
        repeats: 1,
        seed: 3,
        ..BenchConfig::default()
    };
    let (mut l, mut w) = (0.0, 0.0);
    for _ in 0..3 {
        l += run_cell(&cell(SchemeKind::CrystallineL)).unwrap().throughput;
        w += run_cell(&cell(SchemeKind::CrystallineW)).unwrap().throughput;
    }
    let ratio = w / l;
    outcome(
        ratio >= W_OVER_L,
        format!("list read at {threads} threads: W/L = {:.1}% (floor {:.0}%)", 100.0 * ratio, 100.0 * W_OVER_L),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 safety under canary stress", safety),
        ("2 memory bound with a stalled thread", stall_bound),
        ("3 robustness contrast", robustness),
        ("4 wait-free loop bounds", loop_bounds),
        ("5 benchmark protocol", bench_protocol),
        ("6 linearizability", linearizability),
        ("7 crystalline-w overhead", w_overhead),
    ];
    let mut all = true;
    for (name, run) in criteria {
        let t = Instant::now();
        let o = run();
        all &= o.pass;
        println!("{} criterion {name}: {} [{:.1?}]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed());
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
