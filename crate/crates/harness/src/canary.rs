//! Checking allocator for stress runs.
//!
//! Freed nodes are poisoned and quarantined instead of being returned to
//! the system, so a later read through a stale link sees the poison instead
//! of reused memory. The allocator also keeps a shadow of every batch
//! reference count, fed by the scheme's notifications, and checks that it
//! is zero whenever a batch is freed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::marker::PhantomData;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, Ordering::Relaxed};
use std::sync::{Arc, Mutex};

use crystalline::{Linked, NodeAlloc};

/// Counters collected by a [`CanaryAlloc`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AllocReport {
    pub allocated: u64,
    pub freed: u64,
    pub double_frees: u64,
    /// Batches whose shadow count was not zero when freed.
    pub refc_mismatches: u64,
    pub batches_freed: u64,
}

impl AllocReport {
    pub fn merge(&mut self, o: &AllocReport) {
        self.allocated += o.allocated;
        self.freed += o.freed;
        self.double_frees += o.double_frees;
        self.refc_mismatches += o.refc_mismatches;
        self.batches_freed += o.batches_freed;
    }
}

/// Allocators that can report checking counters.
pub trait Probe {
    fn report(&self) -> Option<AllocReport> {
        None
    }
}

impl Probe for crystalline::BoxAlloc {}

/// Cloning yields a handle to the same state, so counters can be read after
/// the domain owning the allocator is gone.
pub struct CanaryAlloc<N> {
    inner: Arc<Inner>,
    _node: PhantomData<fn(N) -> N>,
}

struct Inner {
    allocated: AtomicU64,
    quarantine: Mutex<HashSet<usize>>,
    shadow: Mutex<HashMap<usize, usize>>,
    double_frees: AtomicU64,
    refc_mismatches: AtomicU64,
    batches_freed: AtomicU64,
    /// Releases one quarantined node of the allocator's node type.
    release: unsafe fn(usize),
}

unsafe fn release<N>(n: usize) {
    drop(Box::from_raw(n as *mut N));
}

impl<N> Default for CanaryAlloc<N> {
    fn default() -> Self {
        CanaryAlloc {
            inner: Arc::new(Inner {
                allocated: AtomicU64::new(0),
                quarantine: Mutex::default(),
                shadow: Mutex::default(),
                double_frees: AtomicU64::new(0),
                refc_mismatches: AtomicU64::new(0),
                batches_freed: AtomicU64::new(0),
                release: release::<N>,
            }),
            _node: PhantomData,
        }
    }
}

impl<N> Clone for CanaryAlloc<N> {
    fn clone(&self) -> Self {
        CanaryAlloc { inner: self.inner.clone(), _node: PhantomData }
    }
}

impl<N> CanaryAlloc<N> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> AllocReport {
        let i = &self.inner;
        AllocReport {
            allocated: i.allocated.load(Relaxed),
            freed: i.quarantine.lock().unwrap().len() as u64,
            double_frees: i.double_frees.load(Relaxed),
            refc_mismatches: i.refc_mismatches.load(Relaxed),
            batches_freed: i.batches_freed.load(Relaxed),
        }
    }
}

impl<N> Probe for CanaryAlloc<N> {
    fn report(&self) -> Option<AllocReport> {
        Some(self.snapshot())
    }
}

unsafe impl<N: Linked> NodeAlloc<N> for CanaryAlloc<N> {
    fn alloc(&self, node: N) -> NonNull<N> {
        self.inner.allocated.fetch_add(1, Relaxed);
        NonNull::from(Box::leak(Box::new(node)))
    }

    unsafe fn dealloc(&self, node: NonNull<N>) {
        let mut q = self.inner.quarantine.lock().unwrap();
        if !q.insert(node.as_ptr() as usize) {
            self.inner.double_frees.fetch_add(1, Relaxed);
            return;
        }
        node.as_ref().poison();
    }

    fn refc_init(&self, refs: usize, value: usize) {
        self.inner.shadow.lock().unwrap().insert(refs, value);
    }

    fn refc_add(&self, refs: usize, delta: usize) {
        let mut s = self.inner.shadow.lock().unwrap();
        let v = s.entry(refs).or_insert(0);
        *v = v.wrapping_add(delta);
    }

    fn batch_freed(&self, refs: usize) {
        self.inner.batches_freed.fetch_add(1, Relaxed);
        if self.inner.shadow.lock().unwrap().remove(&refs) != Some(0) {
            self.inner.refc_mismatches.fetch_add(1, Relaxed);
        }
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        for n in self.quarantine.get_mut().unwrap().drain() {
            // Safety: every quarantined node came from `alloc` with the
            // node type `release` was instantiated for, and its owner gave
            // it up through `dealloc` exactly once.
            unsafe { (self.release)(n) };
        }
    }
}

impl<N> fmt::Debug for CanaryAlloc<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CanaryAlloc").field("report", &self.snapshot()).finish()
    }
}
