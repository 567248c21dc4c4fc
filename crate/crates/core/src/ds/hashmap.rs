use alloc::boxed::Box;
use alloc::vec::Vec;
use core::fmt;
use core::ptr;
use core::sync::atomic::AtomicUsize;

use super::list::{Core, Domain, ListHandle, ListNode, INDICES};
use super::PoisonCount;
use crate::config::{Config, ConfigError};
use crate::header::{BoxAlloc, NodeAlloc};
use crate::registry::RegistryError;
use crate::scheme::{Family, Scheme};

/// Default bucket count exponent.
pub const DEFAULT_BUCKET_BITS: u32 = 16;

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash map of `u64` keys: a fixed array of `2^bits` sorted-list buckets
/// sharing one reclamation domain.
pub struct HashMap<V: Send, F: Family, A: NodeAlloc<ListNode<V>> = BoxAlloc> {
    buckets: Box<[AtomicUsize]>,
    mask: u64,
    domain: Domain<V, F, A>,
    poisoned: PoisonCount,
}

impl<V: Send + Clone, F: Family> HashMap<V, F, BoxAlloc> {
    pub fn new(config: Config) -> Result<Self, ConfigError> {
        Self::with_buckets(config, DEFAULT_BUCKET_BITS, BoxAlloc)
    }
}

impl<V: Send + Clone, F: Family, A: NodeAlloc<ListNode<V>>> HashMap<V, F, A> {
    /// A map with `2^bits` buckets.
    ///
    /// # Panics
    ///
    /// If `bits` exceeds 32.
    pub fn with_buckets(config: Config, bits: u32, alloc: A) -> Result<Self, ConfigError> {
        assert!(bits <= 32, "bucket exponent {bits} too large");
        if config.max_idx < INDICES {
            return Err(ConfigError::TooFewIndices { needed: INDICES, configured: config.max_idx });
        }
        let buckets: Vec<AtomicUsize> = (0..1usize << bits).map(|_| AtomicUsize::new(0)).collect();
        Ok(HashMap {
            buckets: buckets.into_boxed_slice(),
            mask: (1u64 << bits) - 1,
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

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    fn bucket(&self, key: u64) -> &AtomicUsize {
        &self.buckets[(mix(key) & self.mask) as usize]
    }

    fn core(&self, h: &ListHandle<'_, V, F, A>) -> Core<'_> {
        assert!(ptr::eq(h.domain(), &self.domain), "handle belongs to another structure");
        Core { poisoned: &self.poisoned }
    }

    /// Inserts `key` unless present. Returns whether it was inserted.
    pub fn put(&self, h: &mut ListHandle<'_, V, F, A>, key: u64, value: V) -> bool {
        // Safety: the handle was checked to belong to this map's domain.
        unsafe { self.core(h).insert(h, self.bucket(key), key, value) }
    }

    pub fn remove(&self, h: &mut ListHandle<'_, V, F, A>, key: u64) -> Option<V> {
        // Safety: as above.
        unsafe { self.core(h).remove(h, self.bucket(key), key) }
    }

    pub fn get(&self, h: &mut ListHandle<'_, V, F, A>, key: u64) -> Option<V> {
        // Safety: as above.
        unsafe { self.core(h).get(h, self.bucket(key), key) }
    }

    /// All keys, sorted. Requires exclusive access.
    pub fn keys(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        for b in self.buckets.iter() {
            // Safety: `&mut self` excludes concurrent operations.
            unsafe { Core::keys_quiescent::<V>(b, |k| out.push(k)) };
        }
        out.sort_unstable();
        out
    }
}

impl<V: Send, F: Family, A: NodeAlloc<ListNode<V>>> Drop for HashMap<V, F, A> {
    fn drop(&mut self) {
        let alloc = self.domain.allocator();
        for b in self.buckets.iter_mut() {
            // Safety: exclusive access.
            unsafe { Core::free_all(alloc, b) };
        }
    }
}

impl<V: Send, F: Family, A: NodeAlloc<ListNode<V>>> fmt::Debug for HashMap<V, F, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashMap")
            .field("scheme", &F::NAME)
            .field("buckets", &self.buckets.len())
            .finish_non_exhaustive()
    }
}
