//! Stress runs on real threads: use-after-free detection with the canary
//! allocator, and memory growth under a stalled thread.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering::SeqCst};
use std::sync::Barrier;

use crystalline::Config;

use crate::canary::AllocReport;
use crate::error::HarnessError;
use crate::hooks;
use crate::kinds::{DsKind, SchemeKind, Workload};
use crate::target::{with_target, AllocKind, Build, Target, Visit};
use crate::workload::{stream_id, Op, OpStream};

/// Operations kept per thread for failure reports.
const LOG_LEN: usize = 16;

#[derive(Clone, Debug)]
pub struct CanarySpec {
    pub scheme: SchemeKind,
    pub ds: DsKind,
    pub threads: usize,
    /// Total operations, split evenly across threads.
    pub ops: u64,
    pub seed: u64,
    pub key_range: u64,
    pub prefill: u64,
    /// Yield at about one scheduling point in this many (0 disables).
    pub chaos_period: u64,
    pub config: Config,
}

impl CanarySpec {
    /// Small-key, high-churn defaults that keep reclamation busy.
    pub fn new(scheme: SchemeKind, ds: DsKind, threads: usize, ops: u64, seed: u64) -> CanarySpec {
        CanarySpec {
            scheme,
            ds,
            threads,
            ops,
            seed,
            key_range: 128,
            prefill: 64,
            chaos_period: 64,
            config: Config { max_idx: ds.indices(), epoch_freq: 8, retire_freq: 8, ..Config::new(threads) },
        }
    }
}

/// A detected violation with the operations that led to it.
#[derive(Clone, Debug)]
pub struct Incident {
    pub thread: usize,
    pub op_index: u64,
    pub op: Op,
    /// The thread's preceding operations, oldest first.
    pub log: Vec<Op>,
}

#[derive(Clone, Debug)]
pub struct CanaryVerdict {
    pub spec_name: String,
    pub ops_done: u64,
    pub poisoned_reads: u64,
    pub alloc: AllocReport,
    pub first_incident: Option<Incident>,
}

impl CanaryVerdict {
    pub fn passed(&self) -> bool {
        self.poisoned_reads == 0 && self.alloc.double_frees == 0 && self.alloc.refc_mismatches == 0
    }
}

impl fmt::Display for CanaryVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ops, {} poisoned reads, {} double frees, {} refc mismatches, {}/{} nodes freed",
            self.spec_name,
            self.ops_done,
            self.poisoned_reads,
            self.alloc.double_frees,
            self.alloc.refc_mismatches,
            self.alloc.freed,
            self.alloc.allocated
        )?;
        if let Some(i) = &self.first_incident {
            write!(f, "\n  first poisoned read: thread {} op #{} {:?}\n  preceding ops:", i.thread, i.op_index, i.op)?;
            for op in &i.log {
                write!(f, " {op:?}")?;
            }
        }
        Ok(())
    }
}

struct CanaryRun<'a>(&'a CanarySpec);

impl Visit for CanaryRun<'_> {
    type Out = (u64, u64, Option<Incident>);

    fn visit<T: Target>(self, t: &T) -> Self::Out {
        let spec = self.0;
        prefill(t, spec.ds, spec.prefill, spec.key_range, spec.seed);
        let incident = std::sync::Mutex::new(None::<Incident>);
        let done = AtomicU64::new(0);
        let per = spec.ops / spec.threads as u64;
        let barrier = Barrier::new(spec.threads);
        std::thread::scope(|s| {
            for tid in 0..spec.threads {
                let (incident, done, barrier) = (&incident, &done, &barrier);
                s.spawn(move || {
                    let _chaos = (spec.chaos_period > 0)
                        .then(|| hooks::chaos(spec.seed ^ ((tid as u64 + 1) * 0x9e37), spec.chaos_period));
                    let mut h = t.handle().expect("one slot per thread");
                    let mut ops = OpStream::new(spec.seed, stream_id(0, tid), Workload::Write, spec.key_range);
                    let mut log = VecDeque::with_capacity(LOG_LEN);
                    barrier.wait();
                    for i in 0..per {
                        let op = ops.next().unwrap();
                        let before = t.poisoned_reads();
                        match op {
                            Op::Insert(k) => t.insert(&mut h, k),
                            Op::Delete(k) => t.delete(&mut h, k),
                            Op::Get(k) => t.get(&mut h, k),
                        };
                        if t.poisoned_reads() > before {
                            let mut g = incident.lock().unwrap();
                            if g.is_none() {
                                *g =
                                    Some(Incident { thread: tid, op_index: i, op, log: log.iter().copied().collect() });
                            }
                        }
                        if log.len() == LOG_LEN {
                            log.pop_front();
                        }
                        log.push_back(op);
                    }
                    done.fetch_add(per, SeqCst);
                });
            }
        });
        (done.load(SeqCst), t.poisoned_reads(), incident.into_inner().unwrap())
    }
}

/// Inserts `n` distinct keys (or pushes `n` values on the stack).
fn prefill<T: Target>(t: &T, ds: DsKind, n: u64, key_range: u64, seed: u64) {
    let mut h = t.handle().expect("registry has room for the prefill");
    let mut keys = OpStream::new(seed, 0, Workload::Write, key_range);
    let mut added = 0;
    while added < n {
        let k = if ds == DsKind::Stack { added } else { keys.key() };
        if t.insert(&mut h, k) {
            added += 1;
        }
    }
}

pub fn run_canary_stress(spec: &CanarySpec) -> Result<CanaryVerdict, HarnessError> {
    if spec.prefill > spec.key_range && spec.ds != DsKind::Stack {
        return Err(HarnessError::Invalid("prefill exceeds key range".into()));
    }
    let b = Build { scheme: spec.scheme, ds: spec.ds, config: spec.config, bucket_bits: 4, alloc: AllocKind::Canary };
    let ((ops_done, poisoned_reads, first_incident), alloc) = with_target(b, CanaryRun(spec))?;
    Ok(CanaryVerdict {
        spec_name: format!("{}/{}/{}t", spec.scheme, spec.ds, spec.threads),
        ops_done,
        poisoned_reads,
        alloc: alloc.unwrap_or_default(),
        first_incident,
    })
}

/// A run with one thread parked inside an operation.
#[derive(Clone, Debug)]
pub struct StallSpec {
    pub scheme: SchemeKind,
    pub ds: DsKind,
    /// `max_threads` includes the stalled thread.
    pub config: Config,
    /// Threads running operations next to the stalled one, at most
    /// `max_threads - 1`.
    pub workers: usize,
    /// The run stops after `2 * half_ops` operations by the other threads.
    pub half_ops: u64,
    pub prefill: u64,
    pub key_range: u64,
    pub seed: u64,
}

impl StallSpec {
    /// The configuration used for memory-bound checks: four threads, two
    /// indices, reclamation attempted every eight retirements.
    pub fn bound_check(scheme: SchemeKind, half_ops: u64, seed: u64) -> StallSpec {
        StallSpec {
            scheme,
            ds: DsKind::Stack,
            config: Config { max_idx: 2, retire_freq: 8, ..Config::new(4) },
            workers: default_workers(4),
            half_ops,
            prefill: 16,
            key_range: 1 << 16,
            seed,
        }
    }

    /// `retire_freq * (max_threads * indices + 1)^2`, with the indices
    /// that enter the bound for the scheme.
    pub fn theoretical_bound(&self) -> u64 {
        let k = (self.config.max_threads * self.scheme.bound_indices(self.config.max_idx) + 1) as u64;
        self.config.retire_freq as u64 * k * k
    }
}

/// Workers for a stall run with `max_threads` slots: one per spare core,
/// at least one. A worker preempted by the OS in the middle of an operation
/// is itself a stalled reader, so oversubscribing the host measures the
/// scheduler rather than the scheme.
pub fn default_workers(max_threads: usize) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    cores.saturating_sub(1).clamp(1, max_threads - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StallReport {
    /// Peak unreclaimed nodes over the first `half_ops` operations.
    pub peak_half: u64,
    /// Peak unreclaimed nodes over the whole run.
    pub peak: u64,
    pub ops: u64,
}

impl StallReport {
    pub fn growth(&self) -> f64 {
        self.peak as f64 / self.peak_half.max(1) as f64
    }
}

struct StallRun<'a>(&'a StallSpec);

impl Visit for StallRun<'_> {
    type Out = StallReport;

    fn visit<T: Target>(self, t: &T) -> StallReport {
        let spec = self.0;
        prefill(t, spec.ds, spec.prefill, spec.key_range, spec.seed);
        let workers = spec.workers;
        assert_eq!(spec.ds, DsKind::Stack, "stall runs drain a stack");
        let total = 2 * spec.half_ops;
        let ticket = AtomicU64::new(0);
        let peak = AtomicU64::new(0);
        let peak_half = AtomicU64::new(u64::MAX);
        let finished = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let stalled = Barrier::new(2);
        std::thread::scope(|s| {
            let (ticket, peak, peak_half, finished, stop, stalled) =
                (&ticket, &peak, &peak_half, &finished, &stop, &stalled);
            s.spawn(move || {
                let mut h = t.handle().expect("slot for the stalled thread");
                t.stall_point(&mut h);
                stalled.wait();
                while !stop.load(SeqCst) {
                    std::thread::park_timeout(std::time::Duration::from_millis(5));
                }
            });
            stalled.wait();
            // Nodes born before the stall stay pinned once retired; retire
            // them all before measuring so the pinned set is fixed.
            {
                let mut h = t.handle().expect("slot for the drain");
                while t.delete(&mut h, 0) {}
            }
            for w in 0..workers {
                s.spawn(move || {
                    let mut h = t.handle().expect("one slot per worker");
                    let mut ops = OpStream::new(spec.seed, stream_id(0, w), Workload::Write, spec.key_range);
                    loop {
                        let i = ticket.fetch_add(1, SeqCst);
                        if i >= total {
                            break;
                        }
                        match ops.next().unwrap() {
                            Op::Insert(k) => t.insert(&mut h, k),
                            Op::Delete(k) | Op::Get(k) => t.delete(&mut h, k),
                        };
                        let u = t.snapshot().unreclaimed();
                        peak.fetch_max(u, SeqCst);
                        if i + 1 == spec.half_ops {
                            peak_half.store(peak.load(SeqCst), SeqCst);
                        }
                    }
                    if finished.fetch_add(1, SeqCst) + 1 == workers {
                        stop.store(true, SeqCst);
                    }
                });
            }
        });
        StallReport { peak_half: peak_half.load(SeqCst), peak: peak.load(SeqCst), ops: total }
    }
}

pub fn run_stall_bound(spec: &StallSpec) -> Result<StallReport, HarnessError> {
    if spec.config.max_threads < 2 {
        return Err(HarnessError::Invalid("a stall run needs at least two threads".into()));
    }
    if spec.workers == 0 || spec.workers >= spec.config.max_threads {
        return Err(HarnessError::Invalid("a stall run needs 1 to max_threads - 1 workers".into()));
    }
    if spec.half_ops == 0 {
        return Err(HarnessError::Invalid("a stall run needs operations".into()));
    }
    if spec.scheme == SchemeKind::Broken {
        return Err(HarnessError::Invalid("the broken scheme frees memory in use".into()));
    }
    let b = Build { scheme: spec.scheme, ds: spec.ds, config: spec.config, bucket_bits: 10, alloc: AllocKind::System };
    Ok(with_target(b, StallRun(spec))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_formula() {
        // (4 * 2 + 1)^2 * 8 and (4 * 4 + 1)^2 * 8 computed by hand.
        assert_eq!(StallSpec::bound_check(SchemeKind::CrystallineL, 1, 0).theoretical_bound(), 648);
        assert_eq!(StallSpec::bound_check(SchemeKind::CrystallineW, 1, 0).theoretical_bound(), 2312);
    }
}
