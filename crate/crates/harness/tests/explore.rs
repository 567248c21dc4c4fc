use crystalline::Event;
use crystalline_harness::explore::{
    explore, loop_bound, scenarios, ExploreConfig, ExploreReport, Strategy, BOUNDED_LOOPS,
};
use crystalline_harness::SchemeKind;

fn run(threads: usize, name: &str, strategy: Strategy, seed: u64) -> ExploreReport {
    let sc = scenarios(threads).into_iter().find(|s| s.name == name).expect("scenario exists");
    let cfg =
        ExploreConfig { scheme: SchemeKind::CrystallineW, strategy, schedules: 300, seed, ..ExploreConfig::default() };
    let r = explore(&sc, &cfg).unwrap();
    assert!(r.passed(), "{name}: {:?}", r.failures.first().map(|f| &f.reason));
    r
}

#[test]
fn pct_reaches_helping_and_terminal_installs() {
    let r = run(3, "list-parent-handover", Strategy::Pct { depth: 3 }, 1);
    assert!(r.event(Event::HelpPublished) > 0);
    assert!(r.event(Event::Produced) > 0);
    assert!(r.event(Event::TerminalInstalled) > 0);
}

#[test]
fn random_reaches_rollback() {
    let r = run(3, "retire-vs-clear", Strategy::Random, 1);
    assert!(r.event(Event::Rollback) > 0);
    assert!(r.event(Event::HelpChanged) > 0);
}

#[test]
fn loops_stay_within_bounds() {
    for threads in [2, 3] {
        for sc in scenarios(threads) {
            let r = run(threads, sc.name, Strategy::Pct { depth: 2 }, 7);
            for k in BOUNDED_LOOPS {
                assert!(r.loops.get(k) <= loop_bound(k, threads), "{} {k:?}", sc.name);
            }
        }
    }
}

#[test]
fn exploration_is_deterministic() {
    let a = run(2, "stale-advert", Strategy::Random, 42);
    let b = run(2, "stale-advert", Strategy::Random, 42);
    assert_eq!(a.events, b.events);
    assert_eq!(a.max_steps, b.max_steps);
    for k in BOUNDED_LOOPS {
        assert_eq!(a.loops.get(k), b.loops.get(k));
    }
}
