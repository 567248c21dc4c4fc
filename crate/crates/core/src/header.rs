//! Node header, sentinels and the allocator interface.

use alloc::boxed::Box;
use core::ptr::NonNull;
use core::sync::atomic::AtomicUsize;

use crate::atomic::Shared;

/// Reservation list value of a thread outside any operation.
pub const INVALID: usize = usize::MAX;

/// Bias added to a batch reference count while the retiring thread is still
/// distributing references. Counts are wrapping 64-bit values.
pub const REFC_PROTECT: usize = 1 << 63;

/// Bias held by a slow-path thread while handing a retired parent over to
/// its helpers.
pub const REFC_PROTECT_HANDOVER: usize = 1 << 62;

/// Low bits of a node address available to data structures for marks.
pub const TAG_BITS: usize = 0b111;

/// Three machine words placed at the start of every reclaimable node.
///
/// The words are reused over a node's lifetime:
///
/// | word | live node | REFS node            | SLOT node              |
/// |------|-----------|----------------------|------------------------|
/// | 1    | unused    | refc                 | bnext                  |
/// | 2    | birth era | min birth era        | birth, slot, then next |
/// | 3    | null      | first SLOT (encoded) | REFS                   |
#[derive(Debug, Default)]
#[repr(C)]
pub struct NodeHeader {
    pub(crate) word1: AtomicUsize,
    pub(crate) word2: AtomicUsize,
    pub(crate) blink: AtomicUsize,
}

impl NodeHeader {
    pub const fn new() -> NodeHeader {
        NodeHeader { word1: AtomicUsize::new(0), word2: AtomicUsize::new(0), blink: AtomicUsize::new(0) }
    }

    /// Birth era recorded at allocation. Only meaningful before retirement.
    pub fn birth(&self) -> u64 {
        self.word2.ld() as u64
    }

    /// Whether the node has been added to a batch.
    pub fn is_retired(&self) -> bool {
        self.blink.ld() != 0
    }
}

/// Types that can be managed by a reclamation domain.
///
/// # Safety
///
/// The type must be `#[repr(C)]` with a [`NodeHeader`] as its first field,
/// so that a pointer to the node is also a pointer to its header.
pub unsafe trait Linked: Sized + Send {
    /// Marks a node as freed. Called by checking allocators instead of
    /// releasing memory; data structures compiled with canaries override it.
    fn poison(&self) {}

    /// Whether [`Linked::poison`] has been called on this node.
    fn is_poisoned(&self) -> bool {
        false
    }
}

/// Allocator used by a domain for its nodes.
///
/// Besides allocation, it receives notifications about batch reference
/// counts, which checking allocators use to keep a shadow count.
///
/// # Safety
///
/// `alloc` must return a unique, properly aligned, initialized node that
/// stays valid until passed to `dealloc`.
pub unsafe trait NodeAlloc<N: Linked>: Send + Sync {
    fn alloc(&self, node: N) -> NonNull<N>;

    /// Releases a node.
    ///
    /// # Safety
    ///
    /// `node` came from `alloc` on this allocator and is not used again.
    unsafe fn dealloc(&self, node: NonNull<N>);

    /// A REFS node's count was initialized to `value`.
    fn refc_init(&self, _refs: usize, _value: usize) {}

    /// `delta` is about to be added to the count of the batch whose REFS
    /// node is `refs`.
    fn refc_add(&self, _refs: usize, _delta: usize) {}

    /// The batch whose REFS node is `refs` is about to be freed.
    fn batch_freed(&self, _refs: usize) {}
}

/// Allocates nodes with the global allocator.
#[derive(Clone, Copy, Debug, Default)]
pub struct BoxAlloc;

unsafe impl<N: Linked> NodeAlloc<N> for BoxAlloc {
    fn alloc(&self, node: N) -> NonNull<N> {
        NonNull::from(Box::leak(Box::new(node)))
    }

    unsafe fn dealloc(&self, node: NonNull<N>) {
        drop(Box::from_raw(node.as_ptr()));
    }
}

/// Header of the node at address `link`.
///
/// # Safety
///
/// `link` is the address of a live node.
#[inline]
pub(crate) unsafe fn hdr<'a>(link: usize) -> &'a NodeHeader {
    &*(link as *const NodeHeader)
}

/// Encodes or decodes a REFS link.
#[inline]
pub(crate) const fn rnode(link: usize) -> usize {
    link ^ 1
}

#[inline]
pub(crate) const fn is_rnode(link: usize) -> bool {
    link & 1 != 0
}
