//! Controlled exploration of thread interleavings.
//!
//! Model threads are real threads that stop at every scheduling point of the
//! schemes and wait for the scheduler, so exactly one of them runs between
//! two points. The scheduler picks the next thread with a seeded strategy
//! and records its choices; a failing schedule is reported with its seed and
//! choice trace.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use crystalline::{Config, Event, LoopCounters, LoopKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canary::AllocReport;
use crate::error::HarnessError;
use crate::hooks;
use crate::kinds::{DsKind, SchemeKind};
use crate::target::{with_target, AllocKind, Build, Target, Visit};
use crate::workload::Op;

struct State {
    running: Option<usize>,
    waiting: Vec<bool>,
    done: Vec<bool>,
    /// Set when the step budget runs out: every thread runs freely.
    free: bool,
}

/// Serializes model threads at scheduling points.
pub struct Controller {
    m: Mutex<State>,
    cv: Condvar,
}

impl Controller {
    pub(crate) fn new(threads: usize) -> Controller {
        Controller {
            m: Mutex::new(State {
                running: None,
                waiting: vec![false; threads],
                done: vec![false; threads],
                free: false,
            }),
            cv: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.m.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Called by model thread `tid` before each step.
    pub(crate) fn point(&self, tid: usize) {
        let mut s = self.lock();
        if s.free {
            return;
        }
        s.waiting[tid] = true;
        if s.running == Some(tid) {
            s.running = None;
        }
        self.cv.notify_all();
        while s.running != Some(tid) && !s.free {
            s = self.cv.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.waiting[tid] = false;
    }

    fn finish(&self, tid: usize) {
        let mut s = self.lock();
        s.done[tid] = true;
        if s.running == Some(tid) {
            s.running = None;
        }
        self.cv.notify_all();
    }

    /// Runs the model threads to completion. Returns the choices made and
    /// whether the budget ran out.
    fn schedule(&self, picker: &mut Picker, budget: usize) -> (Vec<u8>, bool) {
        let mut trace = Vec::new();
        let mut s = self.lock();
        loop {
            while s.running.is_some() || s.waiting.iter().zip(&s.done).any(|(w, d)| !w && !d) {
                s = self.cv.wait(s).unwrap_or_else(|e| e.into_inner());
            }
            let ready: Vec<usize> = (0..s.waiting.len()).filter(|&t| s.waiting[t]).collect();
            if ready.is_empty() {
                return (trace, false);
            }
            if trace.len() >= budget {
                s.free = true;
                self.cv.notify_all();
                return (trace, true);
            }
            let t = picker.pick(&ready, trace.len());
            trace.push(t as u8);
            s.running = Some(t);
            self.cv.notify_all();
        }
    }
}

/// How the next thread is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Uniformly among runnable threads.
    Random,
    /// Probabilistic concurrency testing: fixed random priorities with
    /// `depth - 1` priority drops at random steps.
    Pct { depth: usize },
}

struct Picker {
    rng: ChaCha8Rng,
    strategy: Strategy,
    prio: Vec<u64>,
    changes: Vec<usize>,
}

/// Typical schedule length, used to place PCT change points.
const PCT_HORIZON: usize = 1500;

impl Picker {
    fn new(strategy: Strategy, threads: usize, seed: u64) -> Picker {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prio, changes) = match strategy {
            Strategy::Random => (Vec::new(), Vec::new()),
            Strategy::Pct { depth } => {
                let mut prio: Vec<u64> = (0..threads as u64).map(|p| p + depth as u64).collect();
                for i in (1..prio.len()).rev() {
                    prio.swap(i, rng.gen_range(0..=i));
                }
                let changes = (1..depth).map(|_| rng.gen_range(0..PCT_HORIZON)).collect();
                (prio, changes)
            }
        };
        Picker { rng, strategy, prio, changes }
    }

    fn pick(&mut self, ready: &[usize], step: usize) -> usize {
        match self.strategy {
            Strategy::Random => ready[self.rng.gen_range(0..ready.len())],
            Strategy::Pct { .. } => {
                let best = |p: &[u64]| *ready.iter().max_by_key(|&&t| p[t]).unwrap();
                if let Some(i) = self.changes.iter().position(|&c| c == step) {
                    let t = best(&self.prio);
                    self.prio[t] = i as u64;
                }
                best(&self.prio)
            }
        }
    }
}

/// A scripted program for a few model threads against one structure.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: &'static str,
    pub ds: DsKind,
    pub config: Config,
    pub prefill: Vec<u64>,
    /// One operation list per model thread. For the list, keys are owned by
    /// thread `key % threads`, so each thread's results are predictable.
    pub programs: Vec<Vec<Op>>,
}

impl Scenario {
    pub fn threads(&self) -> usize {
        self.programs.len()
    }
}

/// Configuration that makes every protect leave the fast path after one
/// attempt and every allocation advance the era.
pub fn tiny_config(threads: usize, ds: DsKind) -> Config {
    Config { max_threads: threads, max_idx: ds.indices(), epoch_freq: 1, retire_freq: 2, max_tries: 2 }
}

/// The scripted scenarios for `threads` model threads (2 or 3).
pub fn scenarios(threads: usize) -> Vec<Scenario> {
    use Op::*;
    assert!((2..=3).contains(&threads), "scenarios are written for 2 or 3 threads");
    let pick = |v: Vec<Vec<Op>>| v.into_iter().take(threads).collect::<Vec<_>>();
    let n = threads as u64;
    vec![
        // Thread 0 pops while the others allocate (helping on every era
        // increment) and retire.
        Scenario {
            name: "slow-path-helper-retirer",
            ds: DsKind::Stack,
            config: tiny_config(threads, DsKind::Stack),
            prefill: (0..4).collect(),
            programs: pick(vec![
                vec![Delete(0), Delete(0), Insert(100), Delete(0)],
                vec![Insert(200), Insert(201), Delete(0), Insert(202)],
                vec![Insert(300), Delete(0), Insert(301), Delete(0), Delete(0)],
            ]),
        },
        // Two retirers race with a slow path that has to detach its list.
        Scenario {
            name: "detach-vs-retirers",
            ds: DsKind::Stack,
            config: tiny_config(threads, DsKind::Stack),
            prefill: (0..6).collect(),
            programs: pick(vec![
                vec![Delete(0), Delete(0), Delete(0)],
                vec![Insert(10), Delete(0), Insert(11), Delete(0)],
                vec![Insert(20), Delete(0), Insert(21), Delete(0)],
            ]),
        },
        // A reader walks to the far end while the other threads delete and
        // reinsert the nodes it passes through. Their allocations help the
        // reader, and the removals retire the parents the helpers reserve.
        // Two removals come first so the batch holding them is sealed.
        Scenario {
            name: "list-parent-handover",
            ds: DsKind::List,
            config: tiny_config(threads, DsKind::List),
            prefill: (0..4 * n).collect(),
            programs: (0..n)
                .map(|t| match t {
                    0 => vec![Get(3 * n), Get(3 * n), Delete(0), Insert(0), Get(3 * n)],
                    _ => vec![Delete(t), Delete(t + n), Insert(t), Delete(t + 2 * n), Insert(t + n), Insert(t + 2 * n)],
                })
                .collect(),
        },
        // Retirers attach batches to reservations whose owners are about to
        // clear them.
        Scenario {
            name: "retire-vs-clear",
            ds: DsKind::Stack,
            config: tiny_config(threads, DsKind::Stack),
            prefill: (0..8).collect(),
            programs: pick(vec![
                vec![Delete(0); 6],
                vec![Insert(1), Delete(0), Insert(2), Delete(0), Insert(3), Delete(0)],
                vec![Delete(0), Delete(0), Insert(4), Delete(0)],
            ]),
        },
        // Short requests that often converge before a helper acts on them.
        Scenario {
            name: "stale-advert",
            ds: DsKind::Stack,
            config: tiny_config(threads, DsKind::Stack),
            prefill: vec![1],
            programs: pick(vec![
                vec![Delete(0), Delete(0), Delete(0)],
                vec![Insert(2), Insert(3), Insert(4), Insert(5)],
                vec![Insert(6), Insert(7)],
            ]),
        },
    ]
}

/// Loops whose iteration counts are bounded by `max_threads`.
pub const BOUNDED_LOOPS: [LoopKind; 4] =
    [LoopKind::SlowPath, LoopKind::HelpThread, LoopKind::Detach, LoopKind::TerminalInstall];

/// Largest iteration count allowed for `k`. The era loops of the slow path
/// and of helping may fail once per concurrent era increment, of which there
/// are at most `max_threads` including the one already seen before the loop
/// starts; the final iteration succeeds. The other loops fail at most once
/// per other contending thread.
pub fn loop_bound(k: LoopKind, max_threads: usize) -> usize {
    match k {
        LoopKind::SlowPath | LoopKind::HelpThread => max_threads + 1,
        _ => max_threads,
    }
}

/// The first loop bound violated by `loops`, if any.
pub fn loop_violation(loops: &LoopCounters, max_threads: usize) -> Option<String> {
    for k in BOUNDED_LOOPS {
        let n = loops.get(k);
        let bound = loop_bound(k, max_threads);
        if n > bound {
            return Some(format!("{k:?} ran {n} iterations, bound {bound}"));
        }
    }
    let f = loops.get(LoopKind::FullBatchFailures);
    if f != 0 {
        return Some(format!("try_retire ran out of nodes with a full batch {f} times"));
    }
    None
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub scheme: SchemeKind,
    pub strategy: Strategy,
    pub schedules: usize,
    pub seed: u64,
    /// Steps after which a schedule is abandoned and counted as a failure.
    pub budget: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            scheme: SchemeKind::CrystallineW,
            strategy: Strategy::Random,
            schedules: 200,
            seed: 0,
            budget: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub seed: u64,
    pub reason: String,
    pub trace: Vec<u8>,
}

impl Failure {
    /// Trace as run-length encoded thread choices, e.g. `0x12 1x3 ...`.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < self.trace.len() {
            let t = self.trace[i];
            let n = self.trace[i..].iter().take_while(|&&x| x == t).count();
            let _ = write!(out, "{t}x{n} ");
            i += n;
        }
        out.trim_end().to_owned()
    }
}

#[derive(Clone, Debug)]
pub struct ExploreReport {
    pub scenario: &'static str,
    pub threads: usize,
    pub schedules: usize,
    pub max_steps: usize,
    pub loops: LoopCounters,
    pub events: Vec<(Event, u64)>,
    pub failures: Vec<Failure>,
}

impl ExploreReport {
    pub fn event(&self, e: Event) -> u64 {
        self.events.iter().find(|(k, _)| *k == e).map_or(0, |x| x.1)
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Outcome {
    trace: Vec<u8>,
    loops: LoopCounters,
    events: Vec<(Event, u64)>,
    violation: Option<String>,
}

struct OneSchedule<'a> {
    scenario: &'a Scenario,
    strategy: Strategy,
    seed: u64,
    budget: usize,
}

impl Visit for OneSchedule<'_> {
    type Out = Outcome;

    fn visit<T: Target>(self, t: &T) -> Outcome {
        let sc = self.scenario;
        let n = sc.threads();
        {
            let mut h = t.handle().expect("registry has room for the prefill");
            for &k in &sc.prefill {
                t.insert(&mut h, k);
            }
        }
        let ctl = Arc::new(Controller::new(n));
        let mut picker = Picker::new(self.strategy, n, self.seed);
        let (results, (trace, exhausted)) = std::thread::scope(|s| {
            let workers: Vec<_> = sc
                .programs
                .iter()
                .enumerate()
                .map(|(tid, prog)| {
                    let ctl = ctl.clone();
                    s.spawn(move || {
                        let _mode = hooks::controlled(ctl.clone(), tid);
                        let r = catch_unwind(AssertUnwindSafe(|| {
                            ctl.point(tid);
                            let mut h = t.handle().expect("one slot per model thread");
                            let r: Vec<bool> = prog.iter().map(|op| apply(t, &mut h, *op)).collect();
                            drop(h);
                            r
                        }));
                        ctl.finish(tid);
                        r
                    })
                })
                .collect();
            let sched = ctl.schedule(&mut picker, self.budget);
            let results: Vec<_> = workers.into_iter().map(|w| w.join().expect("model thread")).collect();
            (results, sched)
        });
        let snap = t.snapshot();
        let mut violation = None;
        if exhausted {
            violation = Some(format!("no completion within {} steps", self.budget));
        }
        let mut per_thread = Vec::new();
        for (tid, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => per_thread.push(v),
                Err(p) => {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    violation.get_or_insert(format!("thread {tid} panicked: {msg}"));
                }
            }
        }
        if violation.is_none() {
            violation = loop_violation(&snap.loops, sc.config.max_threads)
                .or_else(|| t.verify_quiescent().err())
                .or_else(|| (t.poisoned_reads() != 0).then(|| format!("{} reads of freed nodes", t.poisoned_reads())))
                .or_else(|| check_results(t, sc, &per_thread));
        }
        Outcome {
            trace,
            loops: snap.loops,
            events: Event::ALL.iter().map(|&e| (e, snap.event(e))).collect(),
            violation,
        }
    }
}

fn apply<T: Target>(t: &T, h: &mut T::Handle<'_>, op: Op) -> bool {
    match op {
        Op::Insert(k) => t.insert(h, k),
        Op::Delete(k) => t.delete(h, k),
        Op::Get(k) => t.get(h, k),
    }
}

/// Compares results with what the scenario implies: conservation of
/// elements for the stack, and per-thread sequential results for keyed
/// structures.
fn check_results<T: Target>(t: &T, sc: &Scenario, results: &[Vec<bool>]) -> Option<String> {
    let n = sc.threads() as u64;
    match sc.ds {
        DsKind::Stack => {
            let pushes: usize = sc.programs.iter().flatten().filter(|o| matches!(o, Op::Insert(_))).count();
            let pops = sc
                .programs
                .iter()
                .zip(results)
                .flat_map(|(p, r)| p.iter().zip(r))
                .filter(|(o, &r)| matches!(o, Op::Delete(_)) && r)
                .count();
            let mut h = t.handle().expect("threads have left");
            let mut left = 0;
            while t.delete(&mut h, 0) {
                left += 1;
            }
            let want = sc.prefill.len() + pushes - pops;
            (left != want).then(|| format!("stack holds {left} elements, expected {want}"))
        }
        DsKind::List | DsKind::HashMap => {
            for (tid, (prog, got)) in sc.programs.iter().zip(results).enumerate() {
                let mut set: std::collections::BTreeSet<u64> =
                    sc.prefill.iter().copied().filter(|k| k % n == tid as u64).collect();
                for (i, (op, &r)) in prog.iter().zip(got).enumerate() {
                    let want = match *op {
                        Op::Insert(k) => set.insert(k),
                        Op::Delete(k) => set.remove(&k),
                        Op::Get(k) => set.contains(&k),
                    };
                    if r != want {
                        return Some(format!("thread {tid} op {i} {op:?} returned {r}, expected {want}"));
                    }
                }
            }
            None
        }
    }
}

/// Explores `cfg.schedules` schedules of `sc`.
pub fn explore(sc: &Scenario, cfg: &ExploreConfig) -> Result<ExploreReport, HarnessError> {
    if sc.ds != DsKind::Stack {
        let n = sc.threads() as u64;
        for (tid, p) in sc.programs.iter().enumerate() {
            for op in p {
                let (Op::Insert(k) | Op::Delete(k) | Op::Get(k)) = *op;
                if k % n != tid as u64 {
                    return Err(HarnessError::Invalid(format!("{}: key {k} not owned by thread {tid}", sc.name)));
                }
            }
        }
    }
    let mut report = ExploreReport {
        scenario: sc.name,
        threads: sc.threads(),
        schedules: 0,
        max_steps: 0,
        loops: LoopCounters::default(),
        events: Event::ALL.iter().map(|&e| (e, 0)).collect(),
        failures: Vec::new(),
    };
    for i in 0..cfg.schedules {
        let seed = cfg.seed.wrapping_add(i as u64);
        let b = Build { scheme: cfg.scheme, ds: sc.ds, config: sc.config, bucket_bits: 2, alloc: AllocKind::Canary };
        let one = OneSchedule { scenario: sc, strategy: cfg.strategy, seed, budget: cfg.budget };
        let (out, alloc) = with_target(b, one)?;
        report.schedules += 1;
        report.max_steps = report.max_steps.max(out.trace.len());
        report.loops.merge(&out.loops);
        for (acc, (_, n)) in report.events.iter_mut().zip(&out.events) {
            acc.1 += n;
        }
        let reason = out.violation.or_else(|| alloc_violation(alloc.unwrap_or_default()));
        if let Some(reason) = reason {
            report.failures.push(Failure { seed, reason, trace: out.trace });
        }
    }
    Ok(report)
}

fn alloc_violation(a: AllocReport) -> Option<String> {
    if a.double_frees != 0 {
        Some(format!("{} double frees", a.double_frees))
    } else if a.refc_mismatches != 0 {
        Some(format!("{} batches freed with a nonzero shadow count", a.refc_mismatches))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pct_prefers_highest_priority() {
        let mut p = Picker::new(Strategy::Pct { depth: 1 }, 3, 4);
        let top = (0..3).max_by_key(|&t| p.prio[t]).unwrap();
        for step in 0..50 {
            assert_eq!(p.pick(&[0, 1, 2], step), top);
        }
    }

    #[test]
    fn trace_is_run_length_encoded() {
        let f = Failure { seed: 0, reason: String::new(), trace: vec![0, 0, 1, 2, 2, 2] };
        assert_eq!(f.trace_text(), "0x2 1x1 2x3");
    }

    #[test]
    fn list_scenarios_respect_key_ownership() {
        for n in 2..=3 {
            for sc in scenarios(n) {
                assert_eq!(sc.threads(), n);
                if sc.ds != DsKind::Stack {
                    for (tid, p) in sc.programs.iter().enumerate() {
                        for op in p {
                            let (Op::Insert(k) | Op::Delete(k) | Op::Get(k)) = *op;
                            assert_eq!(k % n as u64, tid as u64, "{} {op:?}", sc.name);
                        }
                    }
                }
            }
        }
    }
}
