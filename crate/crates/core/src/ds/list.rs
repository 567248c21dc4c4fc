use core::fmt;
use core::ptr::{self, NonNull};
use core::sync::atomic::AtomicUsize;

use super::{Canary, PoisonCount};
use crate::atomic::{CachePadded, Shared};
use crate::config::{Config, ConfigError};
use crate::header::{BoxAlloc, Linked, NodeAlloc, NodeHeader};
use crate::registry::RegistryError;
use crate::scheme::{Family, Handle, Scheme};

const MARK: usize = 1;

#[repr(C)]
pub struct ListNode<V> {
    header: NodeHeader,
    next: AtomicUsize,
    canary: Canary,
    key: u64,
    value: V,
}

unsafe impl<V: Send> Linked for ListNode<V> {
    fn poison(&self) {
        self.canary.poison()
    }

    fn is_poisoned(&self) -> bool {
        self.canary.is_poisoned()
    }
}

pub(crate) type Domain<V, F, A> = <F as Family>::Domain<ListNode<V>, A>;
pub(crate) type ListHandle<'d, V, F, A> = Handle<'d, Domain<V, F, A>>;

/// Reservation indices used by a list traversal.
pub(crate) const INDICES: usize = 3;

/// A freed node was read; the operation was abandoned.
pub(crate) struct Poisoned;

/// Result of a search: `prev` is the link that pointed to `curr`, the first
/// node with a key not below the one searched for.
struct Pos {
    prev: *const AtomicUsize,
    curr: usize,
    found: bool,
}

#[inline]
unsafe fn node<'a, V>(n: usize) -> &'a ListNode<V> {
    &*(n as *const ListNode<V>)
}

/// Harris-Michael list algorithms over an arbitrary head link, shared by
/// [`SortedList`] and the hash map buckets.
pub(crate) struct Core<'a> {
    pub poisoned: &'a PoisonCount,
}

impl Core<'_> {
    /// Finds `key`, unlinking and retiring marked nodes on the way.
    ///
    /// Indices rotate among `prev`, `curr` and `next`, so `prev` and `curr`
    /// remain protected on return.
    unsafe fn find<V: Send, S: Scheme<Node = ListNode<V>>>(
        &self,
        h: &mut Handle<'_, S>,
        head: &AtomicUsize,
        key: u64,
    ) -> Result<Pos, Poisoned> {
        'retry: loop {
            let mut prev: *const AtomicUsize = head;
            // The node holding `prev`, or 0 for the head.
            let mut prev_node = 0;
            let (mut ip, mut ic, mut inx) = (2, 0, 1);
            let mut curr = h.protect(&*prev, ic, 0);
            loop {
                if curr == 0 {
                    return Ok(Pos { prev, curr, found: false });
                }
                let c = node::<V>(curr);
                let next = h.protect(&c.next, inx, curr);
                let ckey = c.key;
                // `curr` is protected even if already unlinked.
                if self.poisoned.hit(&c.canary) {
                    return Err(Poisoned);
                }
                if (*prev).ld() != curr {
                    continue 'retry;
                }
                if prev_node != 0 && self.poisoned.hit(&node::<V>(prev_node).canary) {
                    return Err(Poisoned);
                }
                if next & MARK == 0 {
                    if ckey >= key {
                        return Ok(Pos { prev, curr, found: ckey == key });
                    }
                    prev = &c.next;
                    prev_node = curr;
                    (ip, ic, inx) = (ic, inx, ip);
                } else {
                    let next = next & !MARK;
                    if !(*prev).cas(curr, next) {
                        continue 'retry;
                    }
                    h.retire(NonNull::new_unchecked(curr as *mut ListNode<V>));
                    (ic, inx) = (inx, ic);
                }
                curr = next & !MARK;
            }
        }
    }

    pub unsafe fn insert<V: Send, S: Scheme<Node = ListNode<V>>>(
        &self,
        h: &mut Handle<'_, S>,
        head: &AtomicUsize,
        key: u64,
        value: V,
    ) -> bool {
        h.begin();
        let mut value = Some(value);
        let mut fresh: Option<NonNull<ListNode<V>>> = None;
        let res = loop {
            let pos = match self.find(h, head, key) {
                Ok(p) => p,
                Err(Poisoned) => break false,
            };
            if pos.found {
                break false;
            }
            let n = *fresh.get_or_insert_with(|| {
                h.alloc(ListNode {
                    header: NodeHeader::new(),
                    next: AtomicUsize::new(0),
                    canary: Canary::new(),
                    key,
                    value: value.take().expect("value moved once"),
                })
            });
            n.as_ref().next.st(pos.curr);
            if (*pos.prev).cas(pos.curr, n.as_ptr() as usize) {
                fresh = None;
                break true;
            }
        };
        if let Some(n) = fresh {
            h.discard(n);
        }
        h.end();
        res
    }

    pub unsafe fn remove<V: Send + Clone, S: Scheme<Node = ListNode<V>>>(
        &self,
        h: &mut Handle<'_, S>,
        head: &AtomicUsize,
        key: u64,
    ) -> Option<V> {
        h.begin();
        let res = loop {
            let pos = match self.find(h, head, key) {
                Ok(p) => p,
                Err(Poisoned) => break None,
            };
            if !pos.found {
                break None;
            }
            let c = node::<V>(pos.curr);
            let next = c.next.ld();
            if next & MARK != 0 {
                continue;
            }
            if !c.next.cas(next, next | MARK) {
                continue;
            }
            let v = c.value.clone();
            if self.poisoned.hit(&c.canary) {
                break None;
            }
            if (*pos.prev).cas(pos.curr, next) {
                h.retire(NonNull::new_unchecked(pos.curr as *mut ListNode<V>));
            } else {
                let _ = self.find(h, head, key);
            }
            break Some(v);
        };
        h.end();
        res
    }

    pub unsafe fn get<V: Send + Clone, S: Scheme<Node = ListNode<V>>>(
        &self,
        h: &mut Handle<'_, S>,
        head: &AtomicUsize,
        key: u64,
    ) -> Option<V> {
        h.begin();
        let res = match self.find(h, head, key) {
            Ok(pos) if pos.found => {
                let c = node::<V>(pos.curr);
                let v = c.value.clone();
                if self.poisoned.hit(&c.canary) {
                    None
                } else {
                    Some(v)
                }
            }
            _ => None,
        };
        h.end();
        res
    }

    /// Frees every node reachable from `head`.
    ///
    /// # Safety
    ///
    /// No operation is in progress on the list.
    pub unsafe fn free_all<V: Send, A: NodeAlloc<ListNode<V>>>(alloc: &A, head: &mut AtomicUsize) {
        let mut n = *head.get_mut() & !MARK;
        while n != 0 {
            let next = node::<V>(n).next.ld() & !MARK;
            alloc.dealloc(NonNull::new_unchecked(n as *mut ListNode<V>));
            n = next;
        }
    }

    /// Keys in order, skipping marked nodes. Not linearizable.
    ///
    /// # Safety
    ///
    /// No node reachable from `head` is freed during the call.
    pub unsafe fn keys_quiescent<V: Send>(head: &AtomicUsize, mut f: impl FnMut(u64)) {
        let mut n = head.ld();
        while n & !MARK != 0 {
            let c = node::<V>(n & !MARK);
            let next = c.next.ld();
            if next & MARK == 0 {
                f(c.key);
            }
            n = next;
        }
    }
}

/// Sorted set of `u64` keys with values, after Harris and Michael. Removed
/// nodes are unlinked promptly by the remover or the next traversal.
pub struct SortedList<V: Send, F: Family, A: NodeAlloc<ListNode<V>> = BoxAlloc> {
    head: CachePadded<AtomicUsize>,
    domain: Domain<V, F, A>,
    poisoned: PoisonCount,
}

impl<V: Send + Clone, F: Family> SortedList<V, F, BoxAlloc> {
    pub fn new(config: Config) -> Result<Self, ConfigError> {
        Self::with_alloc(config, BoxAlloc)
    }
}

impl<V: Send + Clone, F: Family, A: NodeAlloc<ListNode<V>>> SortedList<V, F, A> {
    pub fn with_alloc(config: Config, alloc: A) -> Result<Self, ConfigError> {
        if config.max_idx < INDICES {
            return Err(ConfigError::TooFewIndices { needed: INDICES, configured: config.max_idx });
        }
        Ok(SortedList {
            head: CachePadded(AtomicUsize::new(0)),
            domain: Domain::<V, F, A>::new(config, alloc)?,
            poisoned: PoisonCount::default(),
        })
    }

    pub fn domain(&self) -> &Domain<V, F, A> {
        &self.domain
    }

    pub fn handle(&self) -> Result<ListHandle<'_, V, F, A>, RegistryError> {
        self.domain.handle()
    }

    pub fn poisoned_reads(&self) -> u64 {
        self.poisoned.get()
    }

    fn core(&self, h: &ListHandle<'_, V, F, A>) -> Core<'_> {
        assert!(ptr::eq(h.domain(), &self.domain), "handle belongs to another structure");
        Core { poisoned: &self.poisoned }
    }

    /// Inserts `key` unless present. Returns whether it was inserted.
    pub fn insert(&self, h: &mut ListHandle<'_, V, F, A>, key: u64, value: V) -> bool {
        // Safety: the handle was checked to belong to this list's domain.
        unsafe { self.core(h).insert(h, &self.head, key, value) }
    }

    pub fn remove(&self, h: &mut ListHandle<'_, V, F, A>, key: u64) -> Option<V> {
        // Safety: as above.
        unsafe { self.core(h).remove(h, &self.head, key) }
    }

    pub fn get(&self, h: &mut ListHandle<'_, V, F, A>, key: u64) -> Option<V> {
        // Safety: as above.
        unsafe { self.core(h).get(h, &self.head, key) }
    }

    /// Keys in ascending order. Requires exclusive access.
    pub fn keys(&mut self) -> alloc::vec::Vec<u64> {
        let mut out = alloc::vec::Vec::new();
        // Safety: `&mut self` excludes concurrent operations.
        unsafe { Core::keys_quiescent::<V>(&self.head, |k| out.push(k)) };
        out
    }
}

impl<V: Send, F: Family, A: NodeAlloc<ListNode<V>>> Drop for SortedList<V, F, A> {
    fn drop(&mut self) {
        // Safety: exclusive access.
        unsafe { Core::free_all(self.domain.allocator(), &mut self.head.0) };
    }
}

impl<V: Send, F: Family, A: NodeAlloc<ListNode<V>>> fmt::Debug for SortedList<V, F, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SortedList").field("scheme", &F::NAME).finish_non_exhaustive()
    }
}
