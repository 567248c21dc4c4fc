//! Per-thread counters.
//!
//! Each registry slot owns a row of counters that only the thread holding
//! the slot writes. Readers add the rows up; the result is approximate while
//! threads are running and exact once they have stopped.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, AtomicUsize, Ordering::Relaxed};

use crate::atomic::CachePadded;

/// Loops whose iteration counts are tracked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LoopKind {
    /// Nodes visited by one reservation-list traversal.
    Traverse,
    /// Iterations of the detaching loop of the slow path.
    Detach,
    /// Iterations of the slow-path convergence loop.
    SlowPath,
    /// Iterations of the helper's convergence loop.
    HelpThread,
    /// Iterations of the helper's REFS-terminal installation loop.
    TerminalInstall,
    /// Iterations of the helper's era transition loop.
    EraTransition,
    /// Reclamation attempts that ran out of nodes although the batch already
    /// had one node per reservation slot plus REFS.
    FullBatchFailures,
}

impl LoopKind {
    pub const ALL: [LoopKind; 7] = [
        LoopKind::Traverse,
        LoopKind::Detach,
        LoopKind::SlowPath,
        LoopKind::HelpThread,
        LoopKind::TerminalInstall,
        LoopKind::EraTransition,
        LoopKind::FullBatchFailures,
    ];
}

const LOOPS: usize = LoopKind::ALL.len();

/// Algorithm events counted for coverage checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    /// `protect` entered the slow path.
    SlowPath,
    /// The slow path converged by itself.
    SelfConverged,
    /// The slow path left with a result produced by a helper.
    Produced,
    /// `help_thread` found a pending request.
    Help,
    /// `help_thread` saw the request change before helping.
    HelpChanged,
    /// A helper published a result.
    HelpPublished,
    /// A REFS-terminal node was installed into a reservation list.
    TerminalInstalled,
    /// A retired parent was handed over to a helper.
    Handover,
    /// A retiring thread found its node tainted and traversed the tail.
    TaintedTail,
    /// A retiring thread rolled back an attachment to an inactive slot.
    Rollback,
    /// A reclamation attempt ran out of nodes.
    RanOutOfNodes,
    /// A batch was freed.
    BatchFreed,
}

impl Event {
    pub const ALL: [Event; 12] = [
        Event::SlowPath,
        Event::SelfConverged,
        Event::Produced,
        Event::Help,
        Event::HelpChanged,
        Event::HelpPublished,
        Event::TerminalInstalled,
        Event::Handover,
        Event::TaintedTail,
        Event::Rollback,
        Event::RanOutOfNodes,
        Event::BatchFreed,
    ];
}

const EVENTS: usize = Event::ALL.len();

/// Maximum iteration count observed per [`LoopKind`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoopCounters {
    max: [usize; LOOPS],
}

impl LoopCounters {
    pub fn get(&self, kind: LoopKind) -> usize {
        self.max[kind as usize]
    }

    #[inline]
    pub fn record(&mut self, kind: LoopKind, n: usize) {
        let m = &mut self.max[kind as usize];
        if n > *m {
            *m = n;
        }
    }

    pub fn merge(&mut self, other: &LoopCounters) {
        for (a, b) in self.max.iter_mut().zip(other.max.iter()) {
            *a = (*a).max(*b);
        }
    }
}

/// Thread-local counters, published to the slot row at operation
/// boundaries.
#[derive(Clone, Debug, Default)]
pub(crate) struct LocalStats {
    pub retired: u64,
    pub freed: u64,
    pub loops: LoopCounters,
    pub events: [u64; EVENTS],
}

impl LocalStats {
    #[inline]
    pub fn event(&mut self, e: Event) {
        self.events[e as usize] += 1;
    }

    /// Retired minus freed by this thread. Negative when this thread frees
    /// batches that others retired.
    pub fn unreclaimed(&self) -> i64 {
        self.retired.wrapping_sub(self.freed) as i64
    }
}

struct Row {
    retired: AtomicU64,
    freed: AtomicU64,
    loops: [AtomicUsize; LOOPS],
    events: [AtomicU64; EVENTS],
}

impl Row {
    fn new() -> Row {
        Row {
            retired: AtomicU64::new(0),
            freed: AtomicU64::new(0),
            loops: core::array::from_fn(|_| AtomicUsize::new(0)),
            events: core::array::from_fn(|_| AtomicU64::new(0)),
        }
    }
}

/// Counter rows for all registry slots.
pub(crate) struct StatsTable {
    rows: Box<[CachePadded<Row>]>,
}

impl StatsTable {
    pub fn new(slots: usize) -> StatsTable {
        StatsTable { rows: (0..slots).map(|_| CachePadded(Row::new())).collect::<Vec<_>>().into_boxed_slice() }
    }

    /// Counters for a thread taking over slot `tid`; totals carry on from
    /// the previous holder.
    pub fn resume(&self, tid: usize) -> LocalStats {
        let r = &self.rows[tid];
        LocalStats {
            retired: r.retired.load(Relaxed),
            freed: r.freed.load(Relaxed),
            loops: LoopCounters { max: core::array::from_fn(|i| r.loops[i].load(Relaxed)) },
            events: core::array::from_fn(|i| r.events[i].load(Relaxed)),
        }
    }

    pub fn publish(&self, tid: usize, s: &LocalStats) {
        let r = &self.rows[tid];
        r.retired.store(s.retired, Relaxed);
        r.freed.store(s.freed, Relaxed);
        for i in 0..LOOPS {
            r.loops[i].store(s.loops.max[i], Relaxed);
        }
        for i in 0..EVENTS {
            r.events[i].store(s.events[i], Relaxed);
        }
    }

    /// Counts freed outside any registered thread, e.g. on drop.
    pub fn add_freed(&self, n: u64) {
        self.rows[0].freed.fetch_add(n, Relaxed);
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut s = Snapshot::default();
        for r in self.rows.iter() {
            s.retired += r.retired.load(Relaxed);
            s.freed += r.freed.load(Relaxed);
            for i in 0..LOOPS {
                s.loops.max[i] = s.loops.max[i].max(r.loops[i].load(Relaxed));
            }
            for i in 0..EVENTS {
                s.events[i] += r.events[i].load(Relaxed);
            }
        }
        s
    }
}

/// Domain-wide totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub retired: u64,
    pub freed: u64,
    pub loops: LoopCounters,
    events: [u64; EVENTS],
}

impl Snapshot {
    /// Retired nodes not yet freed.
    pub fn unreclaimed(&self) -> u64 {
        self.retired.saturating_sub(self.freed)
    }

    pub fn event(&self, e: Event) -> u64 {
        self.events[e as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_and_resume() {
        let t = StatsTable::new(3);
        let mut a = t.resume(0);
        a.retired = 10;
        a.freed = 4;
        a.loops.record(LoopKind::SlowPath, 3);
        a.event(Event::Help);
        t.publish(0, &a);
        let mut b = t.resume(2);
        b.freed = 5;
        b.loops.record(LoopKind::SlowPath, 2);
        t.publish(2, &b);
        let s = t.snapshot();
        assert_eq!(s.retired, 10);
        assert_eq!(s.freed, 9);
        assert_eq!(s.unreclaimed(), 1);
        assert_eq!(s.loops.get(LoopKind::SlowPath), 3);
        assert_eq!(s.event(Event::Help), 1);
        assert_eq!(t.resume(0).retired, 10);
        assert_eq!(b.unreclaimed(), -5);
    }
}
