//! Thread registry.
//!
//! A fixed array of `max_threads` slots. Registering claims the lowest free
//! slot; its index is the thread id used to address per-thread reservations.
//! A departing thread may leave an orphan (typically a partially filled
//! batch) in its slot, which the next thread to claim the slot adopts.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::UnsafeCell;
use core::fmt;
use core::sync::atomic::{AtomicBool, Ordering};

use crate::atomic::CachePadded;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegistryError {
    /// All slots are taken.
    Full { capacity: usize },
    /// The slot is not registered.
    NotRegistered(usize),
}

impl fmt::Display for RegistryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistryError::Full { capacity } => write!(f, "all {capacity} thread slots are in use"),
            RegistryError::NotRegistered(tid) => write!(f, "thread slot {tid} is not registered"),
        }
    }
}

impl core::error::Error for RegistryError {}

struct Slot<O> {
    occupied: AtomicBool,
    orphan: UnsafeCell<Option<O>>,
}

pub struct Registry<O> {
    slots: Box<[CachePadded<Slot<O>>]>,
}

// Safety: `orphan` is only touched by the thread that holds the slot
// (claimed with an acquire CAS, released with a release store) or through
// `&mut self`.
unsafe impl<O: Send> Sync for Registry<O> {}
unsafe impl<O: Send> Send for Registry<O> {}

impl<O> Registry<O> {
    pub fn new(capacity: usize) -> Self {
        let slots = (0..capacity)
            .map(|_| CachePadded(Slot { occupied: AtomicBool::new(false), orphan: UnsafeCell::new(None) }))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        Registry { slots }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Claims the lowest free slot, returning its id and any orphan left
    /// there.
    pub fn register(&self) -> Result<(usize, Option<O>), RegistryError> {
        for (tid, slot) in self.slots.iter().enumerate() {
            if !slot.occupied.load(Ordering::Relaxed)
                && slot.occupied.compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed).is_ok()
            {
                // Safety: the slot was just claimed.
                let orphan = unsafe { (*slot.orphan.get()).take() };
                return Ok((tid, orphan));
            }
        }
        Err(RegistryError::Full { capacity: self.capacity() })
    }

    /// Releases slot `tid`, leaving `orphan` for the next holder.
    ///
    /// The caller must be the thread that registered `tid`.
    pub fn unregister(&self, tid: usize, orphan: Option<O>) -> Result<(), RegistryError> {
        let slot = self.slots.get(tid).ok_or(RegistryError::NotRegistered(tid))?;
        if !slot.occupied.load(Ordering::Relaxed) {
            return Err(RegistryError::NotRegistered(tid));
        }
        // Safety: the caller holds the slot.
        unsafe { *slot.orphan.get() = orphan };
        slot.occupied.store(false, Ordering::Release);
        Ok(())
    }

    pub fn is_registered(&self, tid: usize) -> bool {
        self.slots.get(tid).is_some_and(|s| s.occupied.load(Ordering::Acquire))
    }

    /// Takes every orphan. Requires exclusive access, so no slot is held.
    pub fn drain_orphans(&mut self) -> impl Iterator<Item = O> + '_ {
        self.slots.iter_mut().filter_map(|s| s.orphan.get_mut().take())
    }
}

impl<O> fmt::Debug for Registry<O> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let used = self.slots.iter().filter(|s| s.occupied.load(Ordering::Relaxed)).count();
        f.debug_struct("Registry").field("capacity", &self.capacity()).field("registered", &used).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::{Arc, Barrier};
    use std::vec;

    #[test]
    fn lowest_free_slot() {
        let r: Registry<u32> = Registry::new(3);
        assert_eq!(r.register().unwrap().0, 0);
        assert_eq!(r.register().unwrap().0, 1);
        assert_eq!(r.register().unwrap().0, 2);
        assert_eq!(r.register(), Err(RegistryError::Full { capacity: 3 }));
        r.unregister(1, None).unwrap();
        assert_eq!(r.register().unwrap().0, 1);
    }

    #[test]
    fn orphan_adopted_by_next_holder() {
        let r: Registry<&'static str> = Registry::new(2);
        let (a, _) = r.register().unwrap();
        let (b, _) = r.register().unwrap();
        r.unregister(a, Some("partial batch")).unwrap();
        assert_eq!(r.register().unwrap(), (a, Some("partial batch")));
        r.unregister(b, None).unwrap();
        assert_eq!(r.register().unwrap(), (b, None));
    }

    #[test]
    fn unregister_unknown_slot() {
        let r: Registry<()> = Registry::new(2);
        assert_eq!(r.unregister(1, None), Err(RegistryError::NotRegistered(1)));
        assert_eq!(r.unregister(9, None), Err(RegistryError::NotRegistered(9)));
    }

    #[test]
    fn concurrent_registration_is_unique() {
        let r: Arc<Registry<()>> = Arc::new(Registry::new(8));
        let bar = Arc::new(Barrier::new(8));
        let hs: vec::Vec<_> = (0..8)
            .map(|_| {
                let (r, bar) = (r.clone(), bar.clone());
                std::thread::spawn(move || {
                    bar.wait();
                    r.register().unwrap().0
                })
            })
            .collect();
        let ids: HashSet<usize> = hs.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(ids.len(), 8);
        assert!(r.register().is_err());
    }

    proptest::proptest! {
        /// Sequential register/unregister sequences match a slot model.
        #[test]
        fn matches_model(ops in proptest::collection::vec((proptest::bool::ANY, 0usize..6, proptest::option::of(0u32..100)), 0..64)) {
            use proptest::prelude::*;
            let r: Registry<u32> = Registry::new(4);
            let mut held = [false; 4];
            let mut orphans: [Option<u32>; 4] = [None; 4];
            for (reg, tid, orphan) in ops {
                if reg {
                    let want = match held.iter().position(|h| !h) {
                        Some(t) => {
                            held[t] = true;
                            Ok((t, orphans[t].take()))
                        }
                        None => Err(RegistryError::Full { capacity: 4 }),
                    };
                    prop_assert_eq!(r.register(), want);
                } else {
                    let want = if tid < 4 && held[tid] {
                        held[tid] = false;
                        orphans[tid] = orphan;
                        Ok(())
                    } else {
                        Err(RegistryError::NotRegistered(tid))
                    };
                    prop_assert_eq!(r.unregister(tid, orphan), want);
                }
                for (t, h) in held.iter().enumerate() {
                    prop_assert_eq!(r.is_registered(t), *h);
                }
            }
        }
    }
}
