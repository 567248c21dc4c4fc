//! Lock-free data structures written against [`Scheme`](crate::Scheme).
//!
//! * [`Stack`]: Treiber stack; one reservation index.
//! * [`SortedList`]: Harris-Michael list with prompt unlinking; three
//!   reservation indices.
//! * [`HashMap`]: a fixed power-of-two array of sorted-list buckets.
//!
//! With the `verify` feature every node carries a canary word. A checking
//! allocator poisons it instead of freeing the node, and the structures
//! check it after reading a node, counting every poisoned read. An
//! operation that reads a poisoned node gives up and returns as if it had
//! found nothing.

mod hashmap;
mod list;
mod stack;

pub use hashmap::{HashMap, DEFAULT_BUCKET_BITS};
pub use list::{ListNode, SortedList};
pub use stack::{Stack, StackNode};

#[cfg(feature = "verify")]
use core::sync::atomic::{AtomicU64, Ordering::Relaxed};

#[cfg(feature = "verify")]
const LIVE: u64 = 0x11fe_11fe_11fe_11fe;
#[cfg(feature = "verify")]
const POISON: u64 = 0xdead_dead_dead_dead;

#[derive(Debug)]
pub(crate) struct Canary {
    #[cfg(feature = "verify")]
    word: AtomicU64,
}

impl Canary {
    pub const fn new() -> Canary {
        Canary {
            #[cfg(feature = "verify")]
            word: AtomicU64::new(LIVE),
        }
    }

    #[inline]
    pub fn poison(&self) {
        #[cfg(feature = "verify")]
        self.word.store(POISON, core::sync::atomic::Ordering::SeqCst);
    }

    #[inline]
    pub fn is_poisoned(&self) -> bool {
        #[cfg(feature = "verify")]
        {
            self.word.load(core::sync::atomic::Ordering::SeqCst) != LIVE
        }
        #[cfg(not(feature = "verify"))]
        {
            false
        }
    }
}

/// Count of poisoned reads seen by one structure.
#[derive(Debug, Default)]
pub(crate) struct PoisonCount {
    #[cfg(feature = "verify")]
    n: AtomicU64,
}

impl PoisonCount {
    /// Whether `c` is poisoned, counting it if so.
    #[inline]
    pub fn hit(&self, c: &Canary) -> bool {
        let p = c.is_poisoned();
        #[cfg(feature = "verify")]
        if p {
            self.n.fetch_add(1, Relaxed);
        }
        p
    }

    pub fn get(&self) -> u64 {
        #[cfg(feature = "verify")]
        {
            self.n.load(Relaxed)
        }
        #[cfg(not(feature = "verify"))]
        {
            0
        }
    }
}
