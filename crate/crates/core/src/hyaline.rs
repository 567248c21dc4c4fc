//! Hyaline-1 and Hyaline-1S.
//!
//! Every thread owns a single reservation list. A batch is published once it
//! holds `max_threads + 1` nodes: each SLOT node is pushed onto the list of
//! one active thread and the batch count is set to the number of successful
//! pushes. A thread leaving its operation detaches its list and drops one
//! reference per node found there.
//!
//! Hyaline-1S additionally records a birth era in every node and a
//! reservation era per thread, and skips threads whose era predates the
//! oldest node of the batch. A stalled thread then only retains batches of
//! nodes allocated before it stalled.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ptr::NonNull;
use core::sync::atomic::{AtomicU64, AtomicUsize};

use crate::atomic::{CachePadded, Shared};
use crate::batch::{free_batch, refc_add, traverse, Batch, NodeMarker};
use crate::config::{Config, ConfigError};
use crate::header::{hdr, Linked, NodeAlloc, INVALID, REFC_PROTECT};
use crate::registry::{Registry, RegistryError};
use crate::scheme::{Family, Scheme};
use crate::stats::{LocalStats, Snapshot, StatsTable};

/// Hyaline-1 family marker.
#[derive(Debug)]
pub enum Hyaline1 {}

impl Family for Hyaline1 {
    const NAME: &'static str = "hyaline1";
    type Domain<N: Linked, A: NodeAlloc<N>> = Hyaline1Domain<N, A>;
}

/// Hyaline-1S family marker.
#[derive(Debug)]
pub enum Hyaline1S {}

impl Family for Hyaline1S {
    const NAME: &'static str = "hyaline1s";
    type Domain<N: Linked, A: NodeAlloc<N>> = Hyaline1SDomain<N, A>;
}

/// Per-thread state of the Hyaline schemes.
#[derive(Debug)]
pub struct HyalineLocal {
    tid: usize,
    batch: Batch,
    alloc_cnt: u64,
    stats: LocalStats,
}

/// Reads `src` until the global era stops moving, publishing each new era
/// seen. `publish` returns the era actually reserved. Gives up after
/// `cap` reads.
#[inline]
pub(crate) fn converge(
    mut prev: u64,
    cap: usize,
    mut read: impl FnMut() -> usize,
    mut era: impl FnMut() -> u64,
    mut publish: impl FnMut(u64) -> u64,
) -> Result<usize, u64> {
    for _ in 0..cap {
        let ptr = read();
        let curr = era();
        if curr == prev {
            return Ok(ptr);
        }
        prev = publish(curr);
    }
    Err(prev)
}

/// Pushes the SLOT nodes of a full batch onto the lists selected by `keep`
/// and settles the count. Returns the number of nodes freed.
///
/// # Safety
///
/// `batch` holds at least `lists.len() + 1` nodes.
unsafe fn publish<N: Linked, A: NodeAlloc<N>>(
    alloc: &A,
    batch: &mut Batch,
    lists: &[CachePadded<Rsrv>],
    mut keep: impl FnMut(&Rsrv) -> bool,
    stats: &mut LocalStats,
) {
    batch.seal();
    let mut curr = batch.first;
    let mut cnt = REFC_PROTECT.wrapping_neg();
    for slot in lists {
        loop {
            let prev = slot.list.ld();
            if prev == INVALID || !keep(slot) {
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
    if refc_add(alloc, batch.refs, cnt) == cnt.wrapping_neg() {
        free_batch(alloc, batch.refs, stats);
    }
    batch.reset();
}

#[derive(Debug)]
struct Rsrv {
    list: AtomicUsize,
    era: AtomicU64,
}

impl Rsrv {
    fn new() -> Rsrv {
        Rsrv { list: AtomicUsize::new(INVALID), era: AtomicU64::new(0) }
    }
}

macro_rules! common {
    () => {
        fn config(&self) -> &Config {
            &self.config
        }

        fn allocator(&self) -> &A {
            &self.alloc
        }

        fn attach(&self) -> Result<HyalineLocal, RegistryError> {
            let (tid, orphan) = self.registry.register()?;
            Ok(HyalineLocal { tid, batch: orphan.unwrap_or_default(), alloc_cnt: 0, stats: self.stats.resume(tid) })
        }

        fn detach(&self, mut local: HyalineLocal) {
            self.end(&mut local);
            let batch = core::mem::take(&mut local.batch);
            let orphan = if batch.is_empty() { None } else { Some(batch) };
            self.registry.unregister(local.tid, orphan).expect("handle owns its slot");
        }

        fn tid(local: &HyalineLocal) -> usize {
            local.tid
        }

        fn begin(&self, local: &mut HyalineLocal) {
            self.rsrv[local.tid].list.st(0);
        }

        fn end(&self, local: &mut HyalineLocal) {
            let p = self.rsrv[local.tid].list.xchg(INVALID);
            if p != INVALID {
                // Safety: the list was detached by this thread.
                unsafe { traverse(&self.alloc, p, &mut local.stats) };
            }
            self.stats.publish(local.tid, &local.stats);
        }

        fn local_unreclaimed(local: &HyalineLocal) -> i64 {
            local.stats.unreclaimed()
        }

        fn snapshot(&self) -> Snapshot {
            self.stats.snapshot()
        }
    };
}

fn new_parts<O>(config: &Config) -> (Box<[CachePadded<Rsrv>]>, Registry<O>, StatsTable) {
    let rsrv = (0..config.max_threads).map(|_| CachePadded(Rsrv::new())).collect::<Vec<_>>().into_boxed_slice();
    (rsrv, Registry::new(config.max_threads), StatsTable::new(config.max_threads))
}

fn drop_orphans<N: Linked, A: NodeAlloc<N>>(registry: &mut Registry<Batch>, alloc: &A, stats: &StatsTable) {
    for b in registry.drain_orphans() {
        // Safety: no thread is registered, so nothing can reach the batch.
        let n = unsafe { b.free_unpublished(alloc) };
        stats.add_freed(n);
    }
}

/// Hyaline-1 domain.
pub struct Hyaline1Domain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    rsrv: Box<[CachePadded<Rsrv>]>,
    registry: Registry<Batch>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for Hyaline1Domain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = HyalineLocal;

    const NAME: &'static str = "hyaline1";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        let (rsrv, registry, stats) = new_parts(&config);
        Ok(Hyaline1Domain { config, alloc, rsrv, registry, stats, _node: NodeMarker::default() })
    }

    common!();

    unsafe fn protect(&self, _: &mut HyalineLocal, src: &AtomicUsize, _: usize, _: usize) -> usize {
        src.ld()
    }

    fn alloc_node(&self, _: &mut HyalineLocal, node: N) -> NonNull<N> {
        self.alloc.alloc(node)
    }

    unsafe fn retire(&self, local: &mut HyalineLocal, node: NonNull<N>) {
        local.stats.retired += 1;
        local.batch.add(&self.alloc, node.as_ptr() as usize);
        if local.batch.counter > self.config.max_threads {
            publish(&self.alloc, &mut local.batch, &self.rsrv, |_| true, &mut local.stats);
        }
        self.stats.publish(local.tid, &local.stats);
    }
}

impl<N: Linked, A: NodeAlloc<N>> Drop for Hyaline1Domain<N, A> {
    fn drop(&mut self) {
        drop_orphans(&mut self.registry, &self.alloc, &self.stats);
    }
}

/// Hyaline-1S domain.
pub struct Hyaline1SDomain<N: Linked, A: NodeAlloc<N>> {
    config: Config,
    alloc: A,
    rsrv: Box<[CachePadded<Rsrv>]>,
    global_era: CachePadded<AtomicU64>,
    registry: Registry<Batch>,
    stats: StatsTable,
    _node: NodeMarker<N>,
}

impl<N: Linked, A: NodeAlloc<N>> Hyaline1SDomain<N, A> {
    pub fn era(&self) -> u64 {
        self.global_era.ld()
    }
}

unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for Hyaline1SDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = HyalineLocal;

    const NAME: &'static str = "hyaline1s";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        let (rsrv, registry, stats) = new_parts(&config);
        Ok(Hyaline1SDomain {
            config,
            alloc,
            rsrv,
            global_era: CachePadded(AtomicU64::new(1)),
            registry,
            stats,
            _node: NodeMarker::default(),
        })
    }

    common!();

    unsafe fn protect(&self, local: &mut HyalineLocal, src: &AtomicUsize, _: usize, _: usize) -> usize {
        let r = &self.rsrv[local.tid];
        let res = converge(
            r.era.ld(),
            usize::MAX,
            || src.ld(),
            || self.global_era.ld(),
            |e| {
                r.era.st(e);
                e
            },
        );
        match res {
            Ok(p) => p,
            Err(_) => unreachable!(),
        }
    }

    fn alloc_node(&self, local: &mut HyalineLocal, node: N) -> NonNull<N> {
        if local.alloc_cnt.is_multiple_of(self.config.epoch_freq) {
            self.global_era.faa(1);
        }
        local.alloc_cnt += 1;
        let n = self.alloc.alloc(node);
        // Safety: freshly allocated.
        unsafe { hdr(n.as_ptr() as usize).word2.st(self.global_era.ld() as usize) };
        n
    }

    unsafe fn retire(&self, local: &mut HyalineLocal, node: NonNull<N>) {
        let n = node.as_ptr() as usize;
        local.stats.retired += 1;
        if !local.batch.is_empty() {
            local.batch.fold_birth(hdr(n).word2.ld() as u64);
        }
        local.batch.add(&self.alloc, n);
        if local.batch.counter > self.config.max_threads {
            let min_birth = local.batch.min_birth();
            publish(&self.alloc, &mut local.batch, &self.rsrv, |slot| slot.era.ld() >= min_birth, &mut local.stats);
        }
        self.stats.publish(local.tid, &local.stats);
    }
}

impl<N: Linked, A: NodeAlloc<N>> Drop for Hyaline1SDomain<N, A> {
    fn drop(&mut self) {
        drop_orphans(&mut self.registry, &self.alloc, &self.stats);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::header::NodeHeader;
    use core::cell::Cell;
    use std::collections::HashSet;
    use std::sync::Mutex;

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

    fn cfg(threads: usize) -> Config {
        let mut c = Config::new(threads);
        c.epoch_freq = 1;
        c
    }

    #[test]
    fn publishes_after_max_threads_plus_one() {
        let d = Hyaline1Domain::<N, Track>::new(cfg(2), Track::default()).unwrap();
        let mut h = d.handle().unwrap();
        let nodes: std::vec::Vec<_> = (0..3).map(|_| h.alloc(N { h: NodeHeader::new() })).collect();
        unsafe {
            h.retire(nodes[0]);
            h.retire(nodes[1]);
            assert!(d.alloc.freed.lock().unwrap().is_empty());
            // No active thread: zero attachments, the batch is freed at once.
            h.retire(nodes[2]);
        }
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 3);
        assert_eq!(d.snapshot().unreclaimed(), 0);
    }

    #[test]
    fn active_reader_holds_batch_until_end() {
        let d = Hyaline1Domain::<N, Track>::new(cfg(2), Track::default()).unwrap();
        let mut reader = d.handle().unwrap();
        let mut writer = d.handle().unwrap();
        reader.begin();
        unsafe {
            for _ in 0..3 {
                let n = writer.alloc(N { h: NodeHeader::new() });
                writer.retire(n);
            }
        }
        assert!(d.alloc.freed.lock().unwrap().is_empty());
        reader.end();
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 3);
    }

    #[test]
    fn era_skips_older_reservation() {
        let d = Hyaline1SDomain::<N, Track>::new(cfg(2), Track::default()).unwrap();
        let mut stalled = d.handle().unwrap();
        let mut writer = d.handle().unwrap();
        let root = AtomicUsize::new(0);
        stalled.begin();
        unsafe { stalled.protect(&root, 0, 0) };
        let reserved = d.rsrv[stalled.tid()].era.ld();
        unsafe {
            for _ in 0..3 {
                let n = writer.alloc(N { h: NodeHeader::new() });
                assert!(hdr(n.as_ptr() as usize).birth() > reserved);
                writer.retire(n);
            }
        }
        // All nodes were born after the stalled reservation.
        assert_eq!(d.alloc.freed.lock().unwrap().len(), 3);
        stalled.end();
    }

    #[test]
    fn first_allocation_bumps_era() {
        let mut c = cfg(1);
        c.epoch_freq = 3;
        let d = Hyaline1SDomain::<N, Track>::new(c, Track::default()).unwrap();
        let mut h = d.handle().unwrap();
        assert_eq!(d.era(), 1);
        let eras: std::vec::Vec<u64> = (0..7)
            .map(|_| {
                let n = h.alloc(N { h: NodeHeader::new() });
                unsafe { h.discard(n) };
                d.era()
            })
            .collect();
        assert_eq!(eras, [2, 2, 2, 3, 3, 3, 4]);
    }

    #[test]
    fn converge_scripted_clocks() {
        // Stable clock: one read, nothing published.
        let published = Cell::new(0);
        let r = converge(
            5,
            100,
            || 7,
            || 5,
            |e| {
                published.set(published.get() + 1);
                e
            },
        );
        assert_eq!((r, published.get()), (Ok(7), 0));

        // Clock advances once: exactly one publication, then success.
        let clock = Cell::new(5u64);
        let reads = Cell::new(0);
        let r = converge(
            5,
            100,
            || {
                reads.set(reads.get() + 1);
                if reads.get() == 1 {
                    clock.set(6);
                }
                9
            },
            || clock.get(),
            |e| {
                published.set(published.get() + 1);
                e
            },
        );
        assert_eq!((r, published.get(), reads.get()), (Ok(9), 1, 2));

        // Adversarial clock moving on every read never converges.
        let clock = Cell::new(0u64);
        let r = converge(
            0,
            50,
            || 1,
            || {
                clock.set(clock.get() + 1);
                clock.get()
            },
            |e| e,
        );
        assert_eq!(r, Err(50));
    }
}
