//! Batches of retired nodes and the reference-count bookkeeping shared by
//! all reference-counting schemes.
//!
//! A batch is a chain of nodes linked through `bnext`. The first node added
//! becomes the REFS node holding the batch reference count; the others are
//! SLOT nodes, each linked back to REFS and spent on one reservation list.
//! REFS links back to the newest SLOT with an encoded link, which
//! `free_batch` uses as the start of the chain.

use core::marker::PhantomData;
use core::ptr::NonNull;

use crate::atomic::Shared;
use crate::header::{hdr, is_rnode, rnode, Linked, NodeAlloc, INVALID, REFC_PROTECT};
use crate::stats::{Event, LocalStats, LoopKind};

/// A thread-local batch under construction.
#[derive(Debug, Default)]
pub struct Batch {
    pub(crate) first: usize,
    pub(crate) refs: usize,
    pub(crate) counter: usize,
}

impl Batch {
    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.counter
    }

    pub fn is_empty(&self) -> bool {
        self.first == 0
    }

    /// Adds `node`. The first node becomes REFS with its count biased by
    /// [`REFC_PROTECT`]; later ones become SLOT nodes.
    ///
    /// # Safety
    ///
    /// `node` is live, unreachable by new readers and not in any batch.
    pub(crate) unsafe fn add<N: Linked, A: NodeAlloc<N>>(&mut self, alloc: &A, node: usize) {
        let h = hdr(node);
        if self.first == 0 {
            self.refs = node;
            alloc.refc_init(node, REFC_PROTECT);
            h.word1.st(REFC_PROTECT);
        } else {
            h.blink.st(self.refs);
            h.word1.st(self.first);
        }
        self.first = node;
        self.counter += 1;
    }

    /// Lowers the REFS birth era to `birth` if smaller.
    ///
    /// # Safety
    ///
    /// The batch is non-empty.
    pub(crate) unsafe fn fold_birth(&self, birth: u64) {
        let r = hdr(self.refs);
        if (r.word2.ld() as u64) > birth {
            r.word2.st(birth as usize);
        }
    }

    /// REFS min birth era.
    ///
    /// # Safety
    ///
    /// The batch is non-empty.
    pub(crate) unsafe fn min_birth(&self) -> u64 {
        hdr(self.refs).word2.ld() as u64
    }

    /// Points REFS at the newest SLOT so the batch can be freed from REFS.
    ///
    /// # Safety
    ///
    /// The batch holds at least one SLOT.
    pub(crate) unsafe fn seal(&self) {
        hdr(self.refs).blink.st(rnode(self.first));
    }

    pub(crate) fn reset(&mut self) {
        *self = Batch::default();
    }

    /// Frees every node of a batch that was never published.
    ///
    /// # Safety
    ///
    /// No thread can reach any node of the batch.
    pub(crate) unsafe fn free_unpublished<N: Linked, A: NodeAlloc<N>>(self, alloc: &A) -> u64 {
        let mut n = self.first;
        let mut freed = 0;
        while n != 0 {
            let next = if n == self.refs { 0 } else { hdr(n).word1.ld() };
            alloc.dealloc(NonNull::new_unchecked(n as *mut N));
            freed += 1;
            n = next;
        }
        freed
    }
}

/// Adds `delta` to the count of the batch whose REFS node is `refs` and
/// returns the previous count.
///
/// # Safety
///
/// `refs` is a live REFS node.
#[inline]
pub(crate) unsafe fn refc_add<N: Linked, A: NodeAlloc<N>>(alloc: &A, refs: usize, delta: usize) -> usize {
    alloc.refc_add(refs, delta);
    hdr(refs).word1.faa(delta)
}

/// Drops one reference; frees the batch if it was the last.
///
/// # Safety
///
/// The caller owns one reference to the batch.
#[inline]
pub(crate) unsafe fn release<N: Linked, A: NodeAlloc<N>>(alloc: &A, refs: usize, stats: &mut LocalStats) {
    if refc_add(alloc, refs, 1usize.wrapping_neg()) == 1 {
        free_batch(alloc, refs, stats);
    }
}

/// Frees all nodes of a batch whose count reached zero.
///
/// # Safety
///
/// The count of `refs` is zero and no thread can reach the batch.
pub(crate) unsafe fn free_batch<N: Linked, A: NodeAlloc<N>>(alloc: &A, refs: usize, stats: &mut LocalStats) {
    alloc.batch_freed(refs);
    let mut n = rnode(hdr(refs).blink.ld());
    loop {
        let obj = n;
        n = hdr(obj).word1.ld();
        alloc.dealloc(NonNull::new_unchecked(obj as *mut N));
        stats.freed += 1;
        if n == 0 {
            break;
        }
    }
    stats.event(Event::BatchFreed);
}

/// Walks a detached reservation list, dropping one reference per node.
///
/// # Safety
///
/// `head` was detached from a reservation list by the caller, who thereby
/// owns one reference per node on it.
pub(crate) unsafe fn traverse<N: Linked, A: NodeAlloc<N>>(alloc: &A, head: usize, stats: &mut LocalStats) {
    debug_assert_ne!(head, INVALID);
    let mut next = head;
    let mut n = 0;
    while next != 0 {
        let curr = next;
        n += 1;
        next = hdr(curr).word2.ld();
        release(alloc, hdr(curr).blink.ld(), stats);
    }
    stats.loops.record(LoopKind::Traverse, n);
}

/// Like [`traverse`], but taints each visited `next` field so a late
/// retirer appending behind it notices, and handles REFS-terminal nodes.
///
/// # Safety
///
/// As for [`traverse`].
pub(crate) unsafe fn traverse_tainting<N: Linked, A: NodeAlloc<N>>(alloc: &A, head: usize, stats: &mut LocalStats) {
    debug_assert_ne!(head, INVALID);
    let mut next = head;
    let mut n = 0;
    while next != 0 {
        let curr = next;
        n += 1;
        if is_rnode(curr) {
            release(alloc, rnode(curr), stats);
            break;
        }
        next = hdr(curr).word2.xchg(INVALID);
        debug_assert_ne!(next, INVALID);
        release(alloc, hdr(curr).blink.ld(), stats);
    }
    stats.loops.record(LoopKind::Traverse, n);
}

/// REFS node of the batch containing `node`.
///
/// # Safety
///
/// `node` is live and retired.
#[inline]
pub(crate) unsafe fn refs_of(node: usize) -> usize {
    let link = hdr(node).blink.ld();
    if is_rnode(link) {
        node
    } else {
        link
    }
}

/// Birth era of `node`, valid whether or not it is retired: a retired SLOT
/// has reused its birth word, so the REFS minimum stands in for it.
///
/// # Safety
///
/// `node` is zero or live.
pub(crate) unsafe fn birth_of(node: usize) -> u64 {
    if node == 0 {
        return 0;
    }
    let h = hdr(node);
    let mut birth = h.word2.ld() as u64;
    let link = h.blink.ld();
    if link != 0 && !is_rnode(link) {
        birth = hdr(link).word2.ld() as u64;
    }
    birth
}

/// Zero-sized marker tying a scheme to its node type without owning one.
pub(crate) type NodeMarker<N> = PhantomData<fn(N) -> N>;
