use core::fmt;
use core::mem::ManuallyDrop;
use core::ptr::{self, NonNull};
use core::sync::atomic::AtomicUsize;

use super::{Canary, PoisonCount};
use crate::atomic::{CachePadded, Shared};
use crate::config::{Config, ConfigError};
use crate::header::{BoxAlloc, Linked, NodeAlloc, NodeHeader};
use crate::registry::RegistryError;
use crate::scheme::{Family, Handle, Scheme};

#[repr(C)]
pub struct StackNode<T> {
    header: NodeHeader,
    next: AtomicUsize,
    canary: Canary,
    value: ManuallyDrop<T>,
}

unsafe impl<T: Send> Linked for StackNode<T> {
    fn poison(&self) {
        self.canary.poison()
    }

    fn is_poisoned(&self) -> bool {
        self.canary.is_poisoned()
    }
}

type Domain<T, F, A> = <F as Family>::Domain<StackNode<T>, A>;

/// Treiber stack.
///
/// Popped values are moved out of their node, so `T` need not be `Clone`.
pub struct Stack<T: Send, F: Family, A: NodeAlloc<StackNode<T>> = BoxAlloc> {
    top: CachePadded<AtomicUsize>,
    domain: Domain<T, F, A>,
    poisoned: PoisonCount,
}

impl<T: Send, F: Family> Stack<T, F, BoxAlloc> {
    pub fn new(config: Config) -> Result<Self, ConfigError> {
        Self::with_alloc(config, BoxAlloc)
    }
}

impl<T: Send, F: Family, A: NodeAlloc<StackNode<T>>> Stack<T, F, A> {
    pub fn with_alloc(config: Config, alloc: A) -> Result<Self, ConfigError> {
        Ok(Stack {
            top: CachePadded(AtomicUsize::new(0)),
            domain: Domain::<T, F, A>::new(config, alloc)?,
            poisoned: PoisonCount::default(),
        })
    }

    pub fn domain(&self) -> &Domain<T, F, A> {
        &self.domain
    }

    pub fn handle(&self) -> Result<Handle<'_, Domain<T, F, A>>, RegistryError> {
        self.domain.handle()
    }

    /// Reads of freed nodes detected so far (always zero without `verify`).
    pub fn poisoned_reads(&self) -> u64 {
        self.poisoned.get()
    }

    fn check(&self, h: &Handle<'_, Domain<T, F, A>>) {
        assert!(ptr::eq(h.domain(), &self.domain), "handle belongs to another structure");
    }

    pub fn push(&self, h: &mut Handle<'_, Domain<T, F, A>>, value: T) {
        self.check(h);
        h.begin();
        let node = h.alloc(StackNode {
            header: NodeHeader::new(),
            next: AtomicUsize::new(0),
            canary: Canary::new(),
            value: ManuallyDrop::new(value),
        });
        let n = node.as_ptr() as usize;
        loop {
            let next = self.top.ld();
            // Safety: `node` is not yet shared.
            unsafe { node.as_ref() }.next.st(next);
            if self.top.cas(next, n) {
                break;
            }
        }
        h.end();
    }

    pub fn pop(&self, h: &mut Handle<'_, Domain<T, F, A>>) -> Option<T> {
        self.check(h);
        h.begin();
        let res = loop {
            // Safety: inside an operation; the top link is a root.
            let n = unsafe { h.protect(&self.top, 0, 0) };
            if n == 0 {
                break None;
            }
            // Safety: protected above.
            let node = unsafe { &*(n as *const StackNode<T>) };
            let next = node.next.ld();
            if self.poisoned.hit(&node.canary) {
                break None;
            }
            if self.top.cas(n, next) {
                // Safety: the successful CAS makes this thread the only one
                // to take the value.
                let v = unsafe { ptr::read(&*node.value) };
                // Safety: unlinked above, retired once.
                unsafe { h.retire(NonNull::new_unchecked(n as *mut StackNode<T>)) };
                break Some(v);
            }
        };
        h.end();
        res
    }

    /// Whether the stack was empty at some point during the call.
    pub fn is_empty(&self) -> bool {
        self.top.ld() == 0
    }
}

impl<T: Send, F: Family, A: NodeAlloc<StackNode<T>>> Drop for Stack<T, F, A> {
    fn drop(&mut self) {
        let mut n = *self.top.0.get_mut();
        while n != 0 {
            // Safety: exclusive access; every reachable node is live and
            // still owns its value.
            unsafe {
                let node = &mut *(n as *mut StackNode<T>);
                let next = *node.next.get_mut();
                ManuallyDrop::drop(&mut node.value);
                self.domain.allocator().dealloc(NonNull::new_unchecked(node));
                n = next;
            }
        }
    }
}

impl<T: Send, F: Family, A: NodeAlloc<StackNode<T>>> fmt::Debug for Stack<T, F, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stack").field("scheme", &F::NAME).finish_non_exhaustive()
    }
}
