use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use crystalline_harness::explore::{explore, scenarios, ExploreConfig, Strategy, BOUNDED_LOOPS};
use crystalline_harness::stress::{run_canary_stress, run_stall_bound, CanarySpec, StallSpec};
use crystalline_harness::{DsKind, HarnessError, SchemeKind};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Canary,
    Stall,
    Schedules,
}

/// Safety and memory-bound checks for the reclamation schemes.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Comma-separated schemes (`broken` is accepted for the canary suite).
    #[arg(long, default_value = "crystalline-w", value_delimiter = ',')]
    scheme: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated structures for the canary suite.
    #[arg(long, default_value = "stack,list,hashmap", value_delimiter = ',')]
    ds: Vec<String>,
    /// Threads for the canary suite; model threads (2 or 3) for schedules.
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Operations per canary cell, or per half of a stall run.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    /// Seeded runs for the stall suite.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Schedules per scenario.
    #[arg(long, default_value_t = 200)]
    schedules: usize,
    /// Only explore scenarios whose name contains this text.
    #[arg(long)]
    scenario: Option<String>,
    /// Use PCT with this depth instead of uniformly random scheduling.
    #[arg(long)]
    pct: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("smr-verify: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(args: &Args) -> Result<bool, HarnessError> {
    let schemes = args.scheme.iter().map(|s| s.parse()).collect::<Result<Vec<SchemeKind>, _>>()?;
    let mut ok = true;
    match args.suite {
        Suite::Canary => {
            let ds = args.ds.iter().map(|s| s.parse()).collect::<Result<Vec<DsKind>, _>>()?;
            for &scheme in &schemes {
                for &d in &ds {
                    let v = run_canary_stress(&CanarySpec::new(scheme, d, args.threads, args.ops, args.seed))?;
                    let pass = v.passed();
                    println!("{} {v}", if pass { "PASS" } else { "FAIL" });
                    if !pass {
                        eprintln!("{v}");
                    }
                    ok &= pass;
                }
            }
        }
        Suite::Stall => {
            for &scheme in &schemes {
                if scheme == SchemeKind::Broken {
                    return Err(HarnessError::Invalid("the stall suite needs a real scheme".into()));
                }
                for run in 0..args.runs {
                    let spec = StallSpec::bound_check(scheme, args.ops, args.seed + run);
                    let r = run_stall_bound(&spec)?;
                    let bound = spec.theoretical_bound();
                    let growth = r.growth();
                    let pass = match scheme {
                        SchemeKind::CrystallineL | SchemeKind::CrystallineW => r.peak <= bound && growth <= 1.1,
                        s if s.robust() => growth <= 1.1,
                        SchemeKind::None => true,
                        _ => growth >= 1.5,
                    };
                    println!(
                        "{} {scheme} seed {}: peak {} (first half {}), growth {growth:.2}, bound {bound}",
                        if pass { "PASS" } else { "FAIL" },
                        spec.seed,
                        r.peak,
                        r.peak_half
                    );
                    ok &= pass;
                }
            }
        }
        Suite::Schedules => {
            if !(2..=3).contains(&args.threads) {
                return Err(HarnessError::Invalid("schedule exploration uses 2 or 3 threads".into()));
            }
            for &scheme in &schemes {
                let cfg = ExploreConfig {
                    scheme,
                    strategy: args.pct.map_or(Strategy::Random, |depth| Strategy::Pct { depth }),
                    schedules: args.schedules,
                    seed: args.seed,
                    ..ExploreConfig::default()
                };
                let filter = args.scenario.as_deref().unwrap_or("");
                for sc in scenarios(args.threads).into_iter().filter(|s| s.name.contains(filter)) {
                    let r = explore(&sc, &cfg)?;
                    let pass = r.passed();
                    let loops: Vec<String> =
                        BOUNDED_LOOPS.iter().map(|&k| format!("{k:?}={}", r.loops.get(k))).collect();
                    let events: Vec<String> =
                        r.events.iter().filter(|e| e.1 != 0).map(|(e, n)| format!("{e:?}={n}")).collect();
                    println!(
                        "{} {scheme} {} ({} threads): {} schedules, up to {} steps\n  max loops: {}\n  events: {}",
                        if pass { "PASS" } else { "FAIL" },
                        r.scenario,
                        r.threads,
                        r.schedules,
                        r.max_steps,
                        loops.join(" "),
                        events.join(" ")
                    );
                    for f in r.failures.iter().take(3) {
                        eprintln!("{} seed {}: {}\n  trace: {}", r.scenario, f.seed, f.reason, f.trace_text());
                    }
                    ok &= pass;
                }
            }
        }
    }
    Ok(ok)
}
