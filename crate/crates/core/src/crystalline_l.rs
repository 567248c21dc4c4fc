//! Crystalline-L: lock-free reclamation with bounded memory usage.
//!
//! Each thread has `max_idx` reservations, each a list of retired nodes plus
//! the era of the pointer it protects. A batch is attached only to
//! reservations whose era is at least the batch's minimum birth era, so a
//! stalled thread holds back a bounded number of batches. Batches are sized
//! dynamically: a reclamation attempt succeeds as soon as the batch has one
//! SLOT node for every eligible reservation.

use alloc::boxed::Box;
use alloc::vec;
use core::ptr::NonNull;
use core::sync::atomic::{AtomicU64, AtomicUsize};

use crate::atomic::{CachePadded, Shared};
use crate::batch::{free_batch, refc_add, traverse, Batch, NodeMarker};
use crate::config::{Config, ConfigError};
use crate::header::{hdr, Linked, NodeAlloc, INVALID, REFC_PROTECT};
use crate::registry::{Registry, RegistryError};
use crate::scheme::{Family, Scheme};
use crate::stats::{Event, LocalStats, LoopKind, Snapshot, StatsTable};
use crate::table::Table;

/// Crystalline-L family marker.
#[derive(Debug)]
pub enum CrystallineL {}

impl Family for CrystallineL {
    const NAME: &'static str = "crystalline-l";
    type Domain<N: Linked, A: NodeAlloc<N>> = CrystallineLDomain<N, A>;
}

#[derive(Debug)]
pub(crate) struct Rsrv {
    list: AtomicUsize,
    era: AtomicU64,
}

/// Per-thread state.
#[derive(Debug)]
pub struct LLocal {
    tid: usize,
    batch: Batch,
    alloc_cnt: u64,
    /// Indices whose list was activated since the last `end`.
    active: Box<[bool]>,
    stats: LocalStats,
}

pub struct CrystallineLDomain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    rsrv: Table<Rsrv>,
    global_era: CachePadded<AtomicU64>,
    registry: Registry<Batch>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

impl<N: Linked, A: NodeAlloc<N>> CrystallineLDomain<N, A> {
    pub fn era(&self) -> u64 {
        self.global_era.ld()
    }

    /// Drops the nodes accumulated on reservation `index` and reserves
    /// `curr`. Returns the era actually reserved.
    fn update_era(&self, local: &mut LLocal, mut curr: u64, index: usize) -> u64 {
        let r = self.rsrv.get(local.tid, index);
        if r.list.ld() != 0 {
            let list = r.list.xchg(0);
            if list != INVALID {
                // Safety: detached by this thread.
                unsafe { traverse(&self.alloc, list, &mut local.stats) };
            }
            curr = self.global_era.ld();
        }
        r.era.st(curr);
        local.active[index] = true;
        curr
    }

    /// Attaches the batch to every eligible reservation, or leaves it alone
    /// if it does not have enough SLOT nodes yet.
    unsafe fn try_retire(&self, local: &mut LLocal) {
        let batch = &mut local.batch;
        let refs = batch.refs;
        let min_birth = batch.min_birth();
        let mut last = batch.first;
        for i in 0..self.config.max_threads {
            for j in 0..self.config.max_idx {
                let r = self.rsrv.get(i, j);
                if r.list.ld() == INVALID || r.era.ld() < min_birth {
                    continue;
                }
                if last == refs {
                    local.stats.event(Event::RanOutOfNodes);
                    if batch.counter >= self.config.full_batch(self.config.max_idx) {
                        local.stats.loops.record(LoopKind::FullBatchFailures, 1);
                    }
                    return;
                }
                hdr(last).word2.st(r as *const Rsrv as usize);
                last = hdr(last).word1.ld();
            }
        }
        let mut curr = batch.first;
        let mut cnt = REFC_PROTECT.wrapping_neg();
        while curr != last {
            let slot = &*(hdr(curr).word2.ld() as *const Rsrv);
            // The era is not rechecked: it only grows.
            loop {
                let prev = slot.list.ld();
                if prev == INVALID {
                    break;
                }
                hdr(curr).word2.st(prev);
                if slot.list.cas(prev, curr) {
                    cnt = cnt.wrapping_add(1);
                    break;
                }
            }
            curr = hdr(curr).word1.ld();
        }
        if refc_add(&self.alloc, refs, cnt) == cnt.wrapping_neg() {
            free_batch(&self.alloc, refs, &mut local.stats);
        }
        batch.reset();
    }
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for CrystallineLDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = LLocal;

    const NAME: &'static str = "crystalline-l";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(CrystallineLDomain {
            rsrv: Table::new(config.max_threads, config.max_idx, || Rsrv {
                list: AtomicUsize::new(INVALID),
                era: AtomicU64::new(0),
            }),
            global_era: CachePadded(AtomicU64::new(1)),
            registry: Registry::new(config.max_threads),
            stats: StatsTable::new(config.max_threads),
            config,
            alloc,
            _node: NodeMarker::default(),
        })
    }

    fn config(&self) -> &Config {
        &self.config
    }

    fn allocator(&self) -> &A {
        &self.alloc
    }

    fn attach(&self) -> Result<LLocal, RegistryError> {
        let (tid, orphan) = self.registry.register()?;
        Ok(LLocal {
            tid,
            batch: orphan.unwrap_or_default(),
            alloc_cnt: 0,
            active: vec![false; self.config.max_idx].into_boxed_slice(),
            stats: self.stats.resume(tid),
        })
    }

    fn detach(&self, mut local: LLocal) {
        self.end(&mut local);
        let batch = core::mem::take(&mut local.batch);
        let orphan = if batch.is_empty() { None } else { Some(batch) };
        self.registry.unregister(local.tid, orphan).expect("handle owns its slot");
    }

    fn tid(local: &LLocal) -> usize {
        local.tid
    }

    fn begin(&self, _: &mut LLocal) {}

    unsafe fn protect(&self, local: &mut LLocal, src: &AtomicUsize, index: usize, _: usize) -> usize {
        assert!(index < self.config.max_idx, "reservation index out of range");
        // An index cleared since its last use must go through update_era
        // even if the era did not move, or its list would stay inactive.
        let mut prev = if local.active[index] { self.rsrv.get(local.tid, index).era.ld() } else { 0 };
        loop {
            let ptr = src.ld();
            let curr = self.global_era.ld();
            if curr == prev {
                return ptr;
            }
            prev = self.update_era(local, curr, index);
        }
    }

    fn end(&self, local: &mut LLocal) {
        local.active.fill(false);
        for r in self.rsrv.row(local.tid) {
            let list = r.list.xchg(INVALID);
            if list != INVALID {
                // Safety: detached by this thread.
                unsafe { traverse(&self.alloc, list, &mut local.stats) };
            }
        }
        self.stats.publish(local.tid, &local.stats);
    }

    fn alloc_node(&self, local: &mut LLocal, node: N) -> NonNull<N> {
        if local.alloc_cnt.is_multiple_of(self.config.epoch_freq) {
            self.global_era.faa(1);
        }
        local.alloc_cnt += 1;
        let n = self.alloc.alloc(node);
        // Safety: freshly allocated.
        unsafe { hdr(n.as_ptr() as usize).word2.st(self.global_era.ld() as usize) };
        n
    }

    unsafe fn retire(&self, local: &mut LLocal, node: NonNull<N>) {
        let n = node.as_ptr() as usize;
        local.stats.retired += 1;
        if !local.batch.is_empty() {
            local.batch.fold_birth(hdr(n).word2.ld() as u64);
        }
        local.batch.add(&self.alloc, n);
        let c = local.batch.counter;
        if c >= 2 && c.is_multiple_of(self.config.retire_freq) {
            local.batch.seal();
            self.try_retire(local);
        }
        self.stats.publish(local.tid, &local.stats);
    }

    fn local_unreclaimed(local: &LLocal) -> i64 {
        local.stats.unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.stats.snapshot()
    }

    #[cfg(feature = "verify")]
    fn verify_quiescent(&self) -> Result<(), alloc::string::String> {
        for i in 0..self.config.max_threads {
            for (j, r) in self.rsrv.row(i).iter().enumerate() {
                let list = r.list.ld();
                if list != INVALID {
                    return Err(alloc::format!("reservation ({i}, {j}) still holds list {list:#x}"));
                }
            }
        }
        Ok(())
    }
}

impl<N: Linked, A: NodeAlloc<N>> Drop for CrystallineLDomain<N, A> {
    fn drop(&mut self) {
        for b in self.registry.drain_orphans() {
            // Safety: no thread is registered.
            let n = unsafe { b.free_unpublished(&self.alloc) };
            self.stats.add_freed(n);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::header::NodeHeader;
    use std::collections::HashSet;
    use std::sync::Mutex;
    use std::vec::Vec;

    #[repr(C)]
    struct N {
        h: NodeHeader,
    }
    unsafe impl Linked for N {}

    #[derive(Default)]
    struct Track {
        freed: Mutex<HashSet<usize>>,
    }
    unsafe impl NodeAlloc<N> for Track {
        fn alloc(&self, node: N) -> NonNull<N> {
            crate::BoxAlloc.alloc(node)
        }
        unsafe fn dealloc(&self, node: NonNull<N>) {
            assert!(self.freed.lock().unwrap().insert(node.as_ptr() as usize));
        }
    }

    fn cfg(threads: usize, idx: usize, freq: usize) -> Config {
        let mut c = Config::new(threads);
        c.max_idx = idx;
        c.retire_freq = freq;
        c.epoch_freq = 1;
        c
    }

    fn fresh(h: &mut crate::Handle<'_, CrystallineLDomain<N, Track>>) -> NonNull<N> {
        h.alloc(N { h: NodeHeader::new() })
    }

    #[test]
    fn single_node_is_not_retired_alone() {
        let d = CrystallineLDomain::<N, Track>::new(cfg(1, 1, 1), Track::default()).unwrap();
        let mut h = d.handle().unwrap();
        let a = fresh(&mut h);
        unsafe { h.retire(a) };
        assert!(d.alloc.freed.lock().unwrap().is_empty());
        assert_eq!(h.local_unreclaimed(), 1);
        let b = fresh(&mut h);
        unsafe { h.retire(b) };
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 2);
    }

    #[test]
    fn dynamic_batch_waits_for_enough_nodes() {
        // Three active reservations need three SLOT nodes plus REFS.
        let d = CrystallineLDomain::<N, Track>::new(cfg(3, 1, 1), Track::default()).unwrap();
        let mut readers: Vec<_> = (0..2).map(|_| d.handle().unwrap()).collect();
        let mut w = d.handle().unwrap();
        let root = AtomicUsize::new(0);
        for r in readers.iter_mut() {
            r.begin();
            unsafe { r.protect(&root, 0, 0) };
        }
        w.begin();
        unsafe { w.protect(&root, 0, 0) };
        let ns: Vec<_> = (0..4).map(|_| fresh(&mut w)).collect();
        // Readers reserved an era before these nodes were born, so nothing
        // is attached to them; the writer's own reservation is older too.
        unsafe {
            for &n in &ns {
                w.retire(n);
            }
        }
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 4);
        let s = d.snapshot();
        assert_eq!(s.event(Event::RanOutOfNodes), 0);

        // Now reserve the current era everywhere and retire again.
        for r in readers.iter_mut() {
            unsafe { r.protect(&root, 0, 0) };
        }
        let ns: Vec<_> = (0..4).map(|_| fresh(&mut w)).collect();
        for r in readers.iter_mut() {
            r.end();
            r.begin();
            unsafe { r.protect(&root, 0, 0) };
        }
        unsafe { w.protect(&root, 0, 0) };
        unsafe {
            for &n in &ns[..3] {
                w.retire(n);
            }
        }
        // Two SLOT nodes for three reservations: ran out.
        assert!(d.snapshot().event(Event::RanOutOfNodes) >= 1);
        unsafe { w.retire(ns[3]) };
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 4);
        w.end();
        for r in readers.iter_mut() {
            r.end();
        }
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 8);
        assert_eq!(d.snapshot().loops.get(LoopKind::FullBatchFailures), 0);
    }

    #[test]
    fn retire_frequency_gates_attempts() {
        let d = CrystallineLDomain::<N, Track>::new(cfg(1, 1, 4), Track::default()).unwrap();
        let mut h = d.handle().unwrap();
        let ns: Vec<_> = (0..8).map(|_| fresh(&mut h)).collect();
        unsafe {
            for (k, &n) in ns.iter().enumerate() {
                h.retire(n);
                let expect = if k + 1 < 4 {
                    0
                } else if k + 1 < 8 {
                    4
                } else {
                    8
                };
                assert_eq!(d.alloc.freed.lock().unwrap().len(), expect);
            }
        }
    }

    #[test]
    fn orphan_adopted_on_reregistration() {
        let d = CrystallineLDomain::<N, Track>::new(cfg(1, 1, 4), Track::default()).unwrap();
        {
            let mut h = d.handle().unwrap();
            for _ in 0..2 {
                let n = fresh(&mut h);
                unsafe { h.retire(n) };
            }
        }
        let mut h = d.handle().unwrap();
        assert_eq!(h.tid(), 0);
        let n = fresh(&mut h);
        unsafe { h.retire(n) };
        assert!(d.alloc.freed.lock().unwrap().is_empty());
        // Fourth addition overall triggers the attempt.
        let n = fresh(&mut h);
        unsafe { h.retire(n) };
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 4);
    }
}
