//! Epoch-based reclamation and the leaking baseline.
//!
//! EBR keeps a global epoch and a per-thread announcement. Retired nodes go
//! into a limbo bag tagged with the epoch at retirement; the epoch advances
//! only once every thread inside an operation has announced the current
//! epoch, and a bag is freed two epochs after its tag. A thread that stalls
//! inside an operation blocks every advance, so memory grows without bound.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ptr::NonNull;
use core::sync::atomic::{AtomicU64, AtomicUsize};

use crate::atomic::{CachePadded, Shared};
use crate::batch::NodeMarker;
use crate::config::{Config, ConfigError};
use crate::header::{Linked, NodeAlloc};
use crate::registry::{Registry, RegistryError};
use crate::scheme::{Family, Scheme};
use crate::stats::{LocalStats, Snapshot, StatsTable};

/// EBR family marker.
#[derive(Debug)]
pub enum Ebr {}

impl Family for Ebr {
    const NAME: &'static str = "ebr";
    type Domain<N: Linked, A: NodeAlloc<N>> = EbrDomain<N, A>;
}

/// Leaking family marker: retire does nothing.
#[derive(Debug)]
pub enum Leak {}

impl Family for Leak {
    const NAME: &'static str = "none";
    type Domain<N: Linked, A: NodeAlloc<N>> = LeakDomain<N, A>;
}

const QUIESCENT: u64 = u64::MAX;

/// Three limbo bags indexed by epoch modulo three.
#[derive(Debug, Default)]
pub struct Limbo {
    bags: [(u64, Vec<usize>); 3],
}

impl Limbo {
    fn len(&self) -> usize {
        self.bags.iter().map(|b| b.1.len()).sum()
    }
}

#[derive(Debug)]
pub struct EbrLocal {
    tid: usize,
    limbo: Limbo,
    retire_cnt: usize,
    in_op: bool,
    stats: LocalStats,
}

pub struct EbrDomain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    epoch: CachePadded<AtomicU64>,
    announce: Box<[CachePadded<AtomicU64>]>,
    registry: Registry<Limbo>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

impl<N: Linked, A: NodeAlloc<N>> EbrDomain<N, A> {
    pub fn epoch(&self) -> u64 {
        self.epoch.ld()
    }

    /// Advances the global epoch if every active thread has caught up.
    fn try_advance(&self) -> u64 {
        let e = self.epoch.ld();
        for a in self.announce.iter() {
            let v = a.ld();
            if v != QUIESCENT && v != e {
                return e;
            }
        }
        if self.epoch.cas(e, e + 1) {
            e + 1
        } else {
            self.epoch.ld()
        }
    }

    /// Frees bags at least two epochs older than `now`.
    fn collect(&self, local: &mut EbrLocal, now: u64) {
        for bag in local.limbo.bags.iter_mut() {
            if !bag.1.is_empty() && bag.0 + 2 <= now {
                for n in bag.1.drain(..) {
                    // Safety: every thread active when `n` was retired has
                    // since left its operation.
                    unsafe { self.alloc.dealloc(NonNull::new_unchecked(n as *mut N)) };
                    local.stats.freed += 1;
                }
            }
        }
    }
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for EbrDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = EbrLocal;

    const NAME: &'static str = "ebr";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(EbrDomain {
            alloc,
            epoch: CachePadded(AtomicU64::new(0)),
            announce: (0..config.max_threads)
                .map(|_| CachePadded(AtomicU64::new(QUIESCENT)))
                .collect::<Vec<_>>()
                .into_boxed_slice(),
            registry: Registry::new(config.max_threads),
            stats: StatsTable::new(config.max_threads),
            config,
            _node: NodeMarker::default(),
        })
    }

    fn config(&self) -> &Config {
        &self.config
    }

    fn allocator(&self) -> &A {
        &self.alloc
    }

    fn attach(&self) -> Result<EbrLocal, RegistryError> {
        let (tid, orphan) = self.registry.register()?;
        Ok(EbrLocal {
            tid,
            limbo: orphan.unwrap_or_default(),
            retire_cnt: 0,
            in_op: false,
            stats: self.stats.resume(tid),
        })
    }

    fn detach(&self, mut local: EbrLocal) {
        if local.in_op {
            self.end(&mut local);
        }
        let now = self.epoch.ld();
        self.collect(&mut local, now);
        self.stats.publish(local.tid, &local.stats);
        let limbo = core::mem::take(&mut local.limbo);
        let orphan = if limbo.len() == 0 { None } else { Some(limbo) };
        self.registry.unregister(local.tid, orphan).expect("handle owns its slot");
    }

    fn tid(local: &EbrLocal) -> usize {
        local.tid
    }

    fn begin(&self, local: &mut EbrLocal) {
        debug_assert!(!local.in_op, "nested operation");
        local.in_op = true;
        let a = &self.announce[local.tid];
        loop {
            let e = self.epoch.ld();
            a.st(e);
            if self.epoch.ld() == e {
                break;
            }
        }
    }

    unsafe fn protect(&self, _: &mut EbrLocal, src: &AtomicUsize, _: usize, _: usize) -> usize {
        src.ld()
    }

    fn end(&self, local: &mut EbrLocal) {
        debug_assert!(local.in_op, "end without begin");
        local.in_op = false;
        self.announce[local.tid].st(QUIESCENT);
        self.stats.publish(local.tid, &local.stats);
    }

    fn alloc_node(&self, _: &mut EbrLocal, node: N) -> NonNull<N> {
        self.alloc.alloc(node)
    }

    unsafe fn retire(&self, local: &mut EbrLocal, node: NonNull<N>) {
        local.stats.retired += 1;
        let e = self.epoch.ld();
        let bag = &mut local.limbo.bags[(e % 3) as usize];
        if bag.0 != e {
            // Tagged at most e - 3 (or empty): safe to reuse after freeing.
            for n in bag.1.drain(..) {
                self.alloc.dealloc(NonNull::new_unchecked(n as *mut N));
                local.stats.freed += 1;
            }
            bag.0 = e;
        }
        bag.1.push(node.as_ptr() as usize);
        local.retire_cnt += 1;
        if local.retire_cnt.is_multiple_of(self.config.retire_freq) {
            let now = self.try_advance();
            self.collect(local, now);
        }
        self.stats.publish(local.tid, &local.stats);
    }

    fn local_unreclaimed(local: &EbrLocal) -> i64 {
        local.stats.unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.stats.snapshot()
    }
}

impl<N: Linked, A: NodeAlloc<N>> Drop for EbrDomain<N, A> {
    fn drop(&mut self) {
        let mut freed = 0;
        for limbo in self.registry.drain_orphans() {
            for (_, bag) in limbo.bags {
                for n in bag {
                    // Safety: no thread is registered.
                    unsafe { self.alloc.dealloc(NonNull::new_unchecked(n as *mut N)) };
                    freed += 1;
                }
            }
        }
        self.stats.add_freed(freed);
    }
}

#[derive(Debug)]
pub struct LeakLocal {
    tid: usize,
    stats: LocalStats,
}

/// Never frees retired nodes. Upper bound on throughput.
pub struct LeakDomain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    registry: Registry<()>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for LeakDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = LeakLocal;

    const NAME: &'static str = "none";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(LeakDomain {
            alloc,
            registry: Registry::new(config.max_threads),
            stats: StatsTable::new(config.max_threads),
            config,
            _node: NodeMarker::default(),
        })
    }

    fn config(&self) -> &Config {
        &self.config
    }

    fn allocator(&self) -> &A {
        &self.alloc
    }

    fn attach(&self) -> Result<LeakLocal, RegistryError> {
        let (tid, _) = self.registry.register()?;
        Ok(LeakLocal { tid, stats: self.stats.resume(tid) })
    }

    fn detach(&self, local: LeakLocal) {
        self.stats.publish(local.tid, &local.stats);
        self.registry.unregister(local.tid, None).expect("handle owns its slot");
    }

    fn tid(local: &LeakLocal) -> usize {
        local.tid
    }

    fn begin(&self, _: &mut LeakLocal) {}

    unsafe fn protect(&self, _: &mut LeakLocal, src: &AtomicUsize, _: usize, _: usize) -> usize {
        src.ld()
    }

    fn end(&self, local: &mut LeakLocal) {
        self.stats.publish(local.tid, &local.stats);
    }

    fn alloc_node(&self, _: &mut LeakLocal, node: N) -> NonNull<N> {
        self.alloc.alloc(node)
    }

    unsafe fn retire(&self, local: &mut LeakLocal, _: NonNull<N>) {
        local.stats.retired += 1;
    }

    fn local_unreclaimed(local: &LeakLocal) -> i64 {
        local.stats.unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.stats.snapshot()
    }
}
