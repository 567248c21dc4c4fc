//! The interface shared by all reclamation schemes.

use core::fmt;
use core::mem::ManuallyDrop;
use core::ptr::NonNull;
use core::sync::atomic::AtomicUsize;

use crate::config::{Config, ConfigError};
use crate::header::{Linked, NodeAlloc};
use crate::registry::RegistryError;
use crate::stats::Snapshot;

/// A reclamation domain for nodes of type [`Scheme::Node`].
///
/// Threads use a domain through a [`Handle`]; the raw methods taking a
/// `Local` exist for the handle and for wrappers built on top of it.
///
/// # Safety
///
/// Implementations must not free a node while any thread that protected it
/// in its current operation is still inside that operation.
pub unsafe trait Scheme: Send + Sync + Sized {
    type Node: Linked;
    type Alloc: NodeAlloc<Self::Node>;
    /// Per-thread state.
    type Local: Send;

    const NAME: &'static str;

    fn new(config: Config, alloc: Self::Alloc) -> Result<Self, ConfigError>;

    fn config(&self) -> &Config;

    fn allocator(&self) -> &Self::Alloc;

    /// Registers the calling thread.
    fn attach(&self) -> Result<Self::Local, RegistryError>;

    /// Unregisters, clearing reservations and leaving unfinished work for
    /// the next thread to claim the slot.
    fn detach(&self, local: Self::Local);

    fn tid(local: &Self::Local) -> usize;

    /// Starts an operation.
    fn begin(&self, local: &mut Self::Local);

    /// Reads `src` and protects the node it points to under reservation
    /// `index`. `parent` is the protected node containing `src`, or zero
    /// when `src` is a root. The returned value may carry tag bits.
    ///
    /// # Safety
    ///
    /// The caller is inside an operation, `index` is below the configured
    /// number of indices, `parent` (if not zero) is protected, and `src`
    /// stays valid for the duration of the call.
    unsafe fn protect(&self, local: &mut Self::Local, src: &AtomicUsize, index: usize, parent: usize) -> usize;

    /// Ends an operation, releasing all protections.
    fn end(&self, local: &mut Self::Local);

    fn alloc_node(&self, local: &mut Self::Local, node: Self::Node) -> NonNull<Self::Node>;

    /// Retires `node`; it is freed once no operation can still reach it.
    ///
    /// # Safety
    ///
    /// `node` came from this domain, has been unlinked so that no new
    /// operation can reach it, and is retired exactly once.
    unsafe fn retire(&self, local: &mut Self::Local, node: NonNull<Self::Node>);

    /// Retired-minus-freed counted by this thread.
    fn local_unreclaimed(local: &Self::Local) -> i64;

    fn snapshot(&self) -> Snapshot;

    /// Checks invariants that hold whenever no thread is inside an
    /// operation, describing the first violation found.
    #[cfg(feature = "verify")]
    fn verify_quiescent(&self) -> Result<(), alloc::string::String> {
        Ok(())
    }

    /// Registers the calling thread.
    fn handle(&self) -> Result<Handle<'_, Self>, RegistryError> {
        let local = self.attach()?;
        Ok(Handle { domain: self, local: ManuallyDrop::new(local) })
    }
}

/// Selects a scheme independently of node type and allocator, so data
/// structures can be generic over the scheme alone.
pub trait Family: 'static {
    const NAME: &'static str;
    type Domain<N: Linked, A: NodeAlloc<N>>: Scheme<Node = N, Alloc = A>;
}

/// A registered thread. Dropping it unregisters.
pub struct Handle<'d, S: Scheme> {
    domain: &'d S,
    local: ManuallyDrop<S::Local>,
}

impl<'d, S: Scheme> Handle<'d, S> {
    pub fn domain(&self) -> &'d S {
        self.domain
    }

    pub fn tid(&self) -> usize {
        S::tid(&self.local)
    }

    #[inline]
    pub fn begin(&mut self) {
        self.domain.begin(&mut self.local)
    }

    /// See [`Scheme::protect`].
    ///
    /// # Safety
    ///
    /// As for [`Scheme::protect`].
    #[inline]
    pub unsafe fn protect(&mut self, src: &AtomicUsize, index: usize, parent: usize) -> usize {
        self.domain.protect(&mut self.local, src, index, parent)
    }

    #[inline]
    pub fn end(&mut self) {
        self.domain.end(&mut self.local)
    }

    #[inline]
    pub fn alloc(&mut self, node: S::Node) -> NonNull<S::Node> {
        self.domain.alloc_node(&mut self.local, node)
    }

    /// See [`Scheme::retire`].
    ///
    /// # Safety
    ///
    /// As for [`Scheme::retire`].
    #[inline]
    pub unsafe fn retire(&mut self, node: NonNull<S::Node>) {
        self.domain.retire(&mut self.local, node)
    }

    /// Frees a node that was allocated but never made reachable.
    ///
    /// # Safety
    ///
    /// No other thread has seen `node`.
    pub unsafe fn discard(&mut self, node: NonNull<S::Node>) {
        self.domain.allocator().dealloc(node)
    }

    pub fn local_unreclaimed(&self) -> i64 {
        S::local_unreclaimed(&self.local)
    }
}

impl<S: Scheme> Drop for Handle<'_, S> {
    fn drop(&mut self) {
        // Safety: `local` is not used after this.
        let local = unsafe { ManuallyDrop::take(&mut self.local) };
        self.domain.detach(local);
    }
}

impl<S: Scheme> fmt::Debug for Handle<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Handle").field("scheme", &S::NAME).field("tid", &self.tid()).finish()
    }
}
