//! Crystalline-W: wait-free reclamation with bounded memory usage.
//!
//! Crystalline-W extends Crystalline-L in three ways:
//!
//! * Reservation lists and eras carry tags and are updated with double-width
//!   CAS. An even tag is the steady state; an odd tag marks a slow-path
//!   transition in progress, during which retiring threads skip the slot.
//! * `protect` gives up after `max_tries - 1` attempts and advertises a
//!   request. Any thread about to increment the global era first helps every
//!   advertised request by reading the location under its own reservation
//!   and publishing the result. Two extra reservation indices per thread
//!   are used while helping.
//! * Retirement exchanges list heads instead of looping on CAS. A reservation
//!   owner traversing its list taints every `next` field it follows, and a
//!   retirer that finds its node tainted traverses the detached tail itself.
//!
//! A node retrieved by a helper may already be retired. The owner then takes
//! a reference to its batch and installs the REFS node as a terminal of its
//! reservation list. The parent node passed to `protect` is handed over to
//! helpers in the same way.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::ptr::NonNull;
use core::sync::atomic::{AtomicIsize, AtomicU64, AtomicUsize};

use crate::atomic::{CachePadded, Pair, Shared};
use crate::batch::{birth_of, free_batch, refc_add, refs_of, release, traverse_tainting, Batch, NodeMarker};
use crate::config::{Config, ConfigError};
use crate::header::{hdr, rnode, Linked, NodeAlloc, INVALID, REFC_PROTECT, REFC_PROTECT_HANDOVER, TAG_BITS};
use crate::registry::{Registry, RegistryError};
use crate::scheme::{Family, Scheme};
use crate::stats::{Event, LocalStats, LoopKind, Snapshot, StatsTable};
use crate::table::Table;

/// Crystalline-W family marker.
#[derive(Debug)]
pub enum CrystallineW {}

impl Family for CrystallineW {
    const NAME: &'static str = "crystalline-w";
    type Domain<N: Linked, A: NodeAlloc<N>> = CrystallineWDomain<N, A>;
}

const INV: u64 = INVALID as u64;

#[derive(Debug)]
pub(crate) struct Rsrv {
    list: Pair,
    era: Pair,
}

/// Slow-path request of one (thread, index).
#[derive(Debug)]
pub(crate) struct SlowState {
    /// `{INVALID, tag}` while help is requested, then `{pointer, era}`.
    result: Pair,
    era: AtomicU64,
    parent: AtomicUsize,
    obj: AtomicUsize,
}

/// Per-thread state.
#[derive(Debug)]
pub struct WLocal {
    tid: usize,
    batch: Batch,
    alloc_cnt: u64,
    active: Box<[bool]>,
    stats: LocalStats,
}

pub struct CrystallineWDomain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    rsrv: Table<Rsrv>,
    state: Table<SlowState>,
    parents: Box<[CachePadded<AtomicUsize>]>,
    slow_counter: CachePadded<AtomicIsize>,
    global_era: CachePadded<AtomicU64>,
    registry: Registry<Batch>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

#[inline]
fn untag(p: usize) -> usize {
    p & !TAG_BITS
}

impl<N: Linked, A: NodeAlloc<N>> CrystallineWDomain<N, A> {
    pub fn era(&self) -> u64 {
        self.global_era.ld()
    }

    /// Reservation indices per thread including the two helper indices.
    fn indices(&self) -> usize {
        self.config.max_idx + 2
    }

    fn r(&self, i: usize, j: usize) -> &Rsrv {
        self.rsrv.get(i, j)
    }

    unsafe fn traverse(&self, list: usize, stats: &mut LocalStats) {
        if list != INVALID {
            traverse_tainting(&self.alloc, list, stats);
        }
    }

    fn update_era(&self, stats: &mut LocalStats, tid: usize, mut curr: u64, index: usize) -> u64 {
        let r = self.r(tid, index);
        if r.list.v.ld() != 0 {
            let list = r.list.v.xchg(0) as usize;
            // Safety: detached by this thread.
            unsafe { self.traverse(list, stats) };
            curr = self.global_era.ld();
        }
        r.era.v.st(curr);
        curr
    }

    /// Helps pending slow paths, then increments the global era.
    fn increment_era(&self, stats: &mut LocalStats, tid: usize) {
        if self.slow_counter.ld() != 0 {
            for i in 0..self.config.max_threads {
                for j in 0..self.config.max_idx {
                    if self.state.get(i, j).result.v.ld() == INV {
                        self.help_thread(stats, tid, i, j);
                    }
                }
            }
        }
        self.global_era.faa(1);
    }

    /// Moves the era tag of `(i, j)` from `tag` to `tag + 1` and detaches its
    /// list, unless someone else already did. Returns the detached list or
    /// `INVALID`.
    fn detach_nodes(&self, stats: &mut LocalStats, i: usize, j: usize, tag: u64) -> usize {
        let r = self.r(i, j);
        r.era.t.cas(tag, tag + 1);
        let mut n = 0;
        let res = loop {
            n += 1;
            let old = r.list.load();
            if old.1 != tag {
                break INVALID;
            }
            if r.list.cas(old, (0, tag + 1)) {
                break old.0 as usize;
            }
        };
        stats.loops.record(LoopKind::Detach, n);
        res
    }

    /// Gives one reference to the retired `parent`'s batch to each helper
    /// still advertising it.
    unsafe fn handover_parent(&self, stats: &mut LocalStats, parent: usize) {
        if parent == 0 || hdr(parent).blink.ld() == 0 {
            return;
        }
        let refs = refs_of(parent);
        refc_add(&self.alloc, refs, REFC_PROTECT_HANDOVER);
        let mut cnt = REFC_PROTECT_HANDOVER.wrapping_neg();
        for p in self.parents.iter() {
            if p.cas(parent, 0) {
                cnt = cnt.wrapping_add(1);
                stats.event(Event::Handover);
            }
        }
        if refc_add(&self.alloc, refs, cnt) == cnt.wrapping_neg() {
            free_batch(&self.alloc, refs, stats);
        }
    }

    unsafe fn slow_path(&self, local: &mut WLocal, src: &AtomicUsize, index: usize, parent: usize) -> usize {
        let tid = local.tid;
        let stats = &mut local.stats;
        stats.event(Event::SlowPath);
        let parent_birth = birth_of(parent);
        self.slow_counter.faa(1);
        let st = self.state.get(tid, index);
        st.obj.st(src as *const AtomicUsize as usize);
        st.parent.st(parent);
        st.era.st(parent_birth);
        let r = self.r(tid, index);
        let tag = r.era.t.ld();
        st.result.store((INV, tag));
        let mut prev_era = r.era.v.ld();
        let mut iters = 0;
        let mut list;
        'produced: {
            loop {
                iters += 1;
                let ptr = src.ld();
                let mut curr_era = self.global_era.ld();
                if curr_era == prev_era && st.result.cas((INV, tag), (0, 0)) {
                    r.era.t.st(tag + 2);
                    r.list.t.st(tag + 2);
                    self.slow_counter.faa(-1);
                    stats.loops.record(LoopKind::SlowPath, iters);
                    stats.event(Event::SelfConverged);
                    return ptr;
                }
                if r.list.v.ld() != 0 {
                    list = r.list.v.xchg(0) as usize;
                    if r.list.t.ld() != tag {
                        break 'produced;
                    }
                    self.traverse(list, stats);
                    curr_era = self.global_era.ld();
                }
                // Fails only once the result has been produced.
                r.era.cas((prev_era, tag), (curr_era, tag));
                prev_era = curr_era;
                if st.result.v.ld() != INV {
                    break;
                }
            }
            list = self.detach_nodes(stats, tid, index, tag);
        }
        stats.loops.record(LoopKind::SlowPath, iters);
        stats.event(Event::Produced);
        let (ptr, era) = st.result.load();
        r.era.v.st(era);
        r.era.t.st(tag + 2);
        r.list.t.st(tag + 2);
        let node = untag(ptr as usize);
        if node != 0 && hdr(node).blink.ld() != 0 {
            let refs = refs_of(node);
            refc_add(&self.alloc, refs, 1);
            self.traverse(list, stats);
            list = r.list.v.xchg(rnode(refs) as u64) as usize;
            stats.event(Event::TerminalInstalled);
        }
        self.slow_counter.faa(-1);
        self.traverse(list, stats);
        self.handover_parent(stats, parent);
        ptr as usize
    }

    /// Completes the slow path of `(i, j)` on its behalf.
    fn help_thread(&self, stats: &mut LocalStats, tid: usize, i: usize, j: usize) {
        let st = self.state.get(i, j);
        let result = st.result.load();
        if result.0 != INV {
            return;
        }
        stats.event(Event::Help);
        let max_idx = self.config.max_idx;
        let era = st.era.ld();
        let parent = st.parent.ld();
        self.reserve_parent(tid, parent, era);
        let obj = st.obj.ld();
        let target = self.r(i, j);
        let tag = target.era.t.ld();
        if tag == result.1 {
            let mut curr_era = self.global_era.ld();
            let mut iters = 0;
            'done: {
                loop {
                    iters += 1;
                    let prev_era = self.update_era(stats, tid, curr_era, max_idx + 1);
                    // Safety: `obj` is valid while the request is pending,
                    // and the parent holding it is reserved above.
                    let ptr = unsafe { (*(obj as *const AtomicUsize)).ld() };
                    curr_era = self.global_era.ld();
                    if prev_era == curr_era {
                        if st.result.cas(result, (ptr as u64, curr_era)) {
                            stats.event(Event::HelpPublished);
                            let list = self.detach_nodes(stats, i, j, tag);
                            // Safety: detached by this thread.
                            unsafe { self.traverse(list, stats) };
                            let mut n = 0;
                            loop {
                                n += 1;
                                let old = target.era.load();
                                if old.1 != tag + 1 || target.era.cas(old, (curr_era, tag + 2)) {
                                    break;
                                }
                            }
                            stats.loops.record(LoopKind::EraTransition, n);
                            let node = untag(ptr);
                            // Safety: `node` is reserved under max_idx + 1.
                            unsafe {
                                if node != 0 && hdr(node).blink.ld() != 0 {
                                    let refs = refs_of(node);
                                    refc_add(&self.alloc, refs, 1);
                                    let mut n = 0;
                                    loop {
                                        n += 1;
                                        let old = target.list.load();
                                        if old.1 != tag + 1 {
                                            break;
                                        }
                                        if target.list.cas(old, (rnode(refs) as u64, tag + 2)) {
                                            stats.loops.record(LoopKind::TerminalInstall, n);
                                            stats.event(Event::TerminalInstalled);
                                            self.traverse(old.0 as usize, stats);
                                            break 'done;
                                        }
                                    }
                                    stats.loops.record(LoopKind::TerminalInstall, n);
                                    // Already installed by the owner.
                                    release(&self.alloc, refs, stats);
                                } else {
                                    target.list.t.cas(tag + 1, tag + 2);
                                }
                            }
                        }
                        break;
                    }
                    if st.result.load() != result {
                        break;
                    }
                }
            }
            stats.loops.record(LoopKind::HelpThread, iters);
            let lst = self.r(tid, max_idx + 1).list.v.xchg(INV) as usize;
            // Safety: detached by this thread.
            unsafe { self.traverse(lst, stats) };
        } else {
            stats.event(Event::HelpChanged);
        }
        self.drop_parent(stats, tid, parent);
    }

    /// Reserves the parent of a request being helped under the helper's
    /// parent index and advertises it for hand-over.
    fn reserve_parent(&self, tid: usize, parent: usize, era: u64) {
        if parent != 0 {
            let pr = self.r(tid, self.config.max_idx);
            pr.list.v.st(0);
            pr.era.v.st(era);
            self.parents[tid].st(parent);
        }
    }

    /// Withdraws the hand-over advert and the parent reservation. Drops the
    /// reference the owner handed over, if it did.
    fn drop_parent(&self, stats: &mut LocalStats, tid: usize, parent: usize) {
        if parent != 0 {
            if self.parents[tid].xchg(0) != parent {
                // Safety: the handed-over reference keeps the batch alive.
                unsafe { release(&self.alloc, refs_of(parent), stats) };
            }
            let lst = self.r(tid, self.config.max_idx).list.v.xchg(INV) as usize;
            // Safety: detached by this thread.
            unsafe { self.traverse(lst, stats) };
        }
    }

    /// Attaches the batch to every eligible reservation, or leaves it alone
    /// if it does not have enough SLOT nodes yet.
    unsafe fn try_retire(&self, local: &mut WLocal) {
        let batch = &mut local.batch;
        let stats = &mut local.stats;
        let refs = batch.refs;
        let min_birth = batch.min_birth();
        let mut last = batch.first;
        for i in 0..self.config.max_threads {
            for j in 0..self.indices() {
                let r = self.r(i, j);
                if r.list.v.ld() == INV || r.list.t.ld() & 1 != 0 {
                    continue;
                }
                if r.era.v.ld() < min_birth || r.era.t.ld() & 1 != 0 {
                    continue;
                }
                if last == refs {
                    stats.event(Event::RanOutOfNodes);
                    if batch.counter >= self.config.full_batch(self.indices()) {
                        stats.loops.record(LoopKind::FullBatchFailures, 1);
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
            let h = hdr(curr);
            let slot = &*(h.word2.ld() as *const Rsrv);
            let bnext = h.word1.ld();
            // `next` shares the word that held the slot address.
            h.word2.st(0);
            if slot.list.v.ld() != INV {
                let prev = slot.list.v.xchg(curr as u64);
                let mut counted = true;
                if prev == INV {
                    if slot.list.v.cas(curr as u64, INV) {
                        stats.event(Event::Rollback);
                        counted = false;
                    }
                } else if prev != 0 && !h.word2.cas(0, prev as usize) {
                    stats.event(Event::TaintedTail);
                    self.traverse(prev as usize, stats);
                }
                if counted {
                    cnt = cnt.wrapping_add(1);
                }
            }
            curr = bnext;
        }
        if refc_add(&self.alloc, refs, cnt) == cnt.wrapping_neg() {
            free_batch(&self.alloc, refs, stats);
        }
        batch.reset();
    }
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for CrystallineWDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = WLocal;

    const NAME: &'static str = "crystalline-w";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(CrystallineWDomain {
            rsrv: Table::new(config.max_threads, config.max_idx + 2, || Rsrv {
                list: Pair::new(INV, 0),
                era: Pair::new(0, 0),
            }),
            state: Table::new(config.max_threads, config.max_idx, || SlowState {
                result: Pair::new(0, 0),
                era: AtomicU64::new(0),
                parent: AtomicUsize::new(0),
                obj: AtomicUsize::new(0),
            }),
            parents: (0..config.max_threads)
                .map(|_| CachePadded(AtomicUsize::new(0)))
                .collect::<Vec<_>>()
                .into_boxed_slice(),
            slow_counter: CachePadded(AtomicIsize::new(0)),
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

    fn attach(&self) -> Result<WLocal, RegistryError> {
        let (tid, orphan) = self.registry.register()?;
        Ok(WLocal {
            tid,
            batch: orphan.unwrap_or_default(),
            alloc_cnt: 0,
            active: vec![false; self.config.max_idx].into_boxed_slice(),
            stats: self.stats.resume(tid),
        })
    }

    fn detach(&self, mut local: WLocal) {
        self.end(&mut local);
        let batch = core::mem::take(&mut local.batch);
        let orphan = if batch.is_empty() { None } else { Some(batch) };
        self.registry.unregister(local.tid, orphan).expect("handle owns its slot");
    }

    fn tid(local: &WLocal) -> usize {
        local.tid
    }

    fn begin(&self, _: &mut WLocal) {}

    unsafe fn protect(&self, local: &mut WLocal, src: &AtomicUsize, index: usize, parent: usize) -> usize {
        assert!(index < self.config.max_idx, "reservation index out of range");
        let tid = local.tid;
        let mut prev_era = if local.active[index] { self.r(tid, index).era.v.ld() } else { 0 };
        let mut tries = self.config.max_tries;
        loop {
            tries -= 1;
            if tries == 0 {
                break;
            }
            let ptr = src.ld();
            let curr_era = self.global_era.ld();
            if prev_era == curr_era {
                return ptr;
            }
            prev_era = self.update_era(&mut local.stats, tid, curr_era, index);
            local.active[index] = true;
        }
        let p = self.slow_path(local, src, index, untag(parent));
        local.active[index] = true;
        p
    }

    fn end(&self, local: &mut WLocal) {
        local.active.fill(false);
        for j in 0..self.config.max_idx {
            let list = self.r(local.tid, j).list.v.xchg(INV) as usize;
            // Safety: detached by this thread.
            unsafe { self.traverse(list, &mut local.stats) };
        }
        self.stats.publish(local.tid, &local.stats);
    }

    fn alloc_node(&self, local: &mut WLocal, node: N) -> NonNull<N> {
        if local.alloc_cnt.is_multiple_of(self.config.epoch_freq) {
            self.increment_era(&mut local.stats, local.tid);
        }
        local.alloc_cnt += 1;
        let n = self.alloc.alloc(node);
        let h = unsafe { hdr(n.as_ptr() as usize) };
        h.word2.st(self.global_era.ld() as usize);
        h.blink.st(0);
        n
    }

    unsafe fn retire(&self, local: &mut WLocal, node: NonNull<N>) {
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

    fn local_unreclaimed(local: &WLocal) -> i64 {
        local.stats.unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.stats.snapshot()
    }

    #[cfg(feature = "verify")]
    fn verify_quiescent(&self) -> Result<(), alloc::string::String> {
        use alloc::format;
        let pending = self.slow_counter.ld();
        if pending != 0 {
            return Err(format!("slow-path counter is {pending}"));
        }
        for i in 0..self.config.max_threads {
            for j in 0..self.indices() {
                let r = self.r(i, j);
                let (list, lt) = r.list.load();
                let et = r.era.t.ld();
                if list != INV {
                    return Err(format!("reservation ({i}, {j}) still holds list {list:#x}"));
                }
                if lt != et || et & 1 != 0 {
                    return Err(format!("reservation ({i}, {j}) has tags list {lt} era {et}"));
                }
            }
            for j in 0..self.config.max_idx {
                if self.state.get(i, j).result.v.ld() == INV {
                    return Err(format!("request ({i}, {j}) is still pending"));
                }
            }
            let p = self.parents[i].ld();
            if p != 0 {
                return Err(format!("thread {i} still advertises parent {p:#x}"));
            }
        }
        Ok(())
    }
}

impl<N: Linked, A: NodeAlloc<N>> Drop for CrystallineWDomain<N, A> {
    fn drop(&mut self) {
        for b in self.registry.drain_orphans() {
            // Safety: no thread is registered.
            let n = unsafe { b.free_unpublished(&self.alloc) };
            self.stats.add_freed(n);
        }
    }
}
