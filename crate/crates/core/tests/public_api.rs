use std::collections::BTreeMap;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Arc;

use crystalline::ds::{HashMap, SortedList, Stack};
use crystalline::{
    BoxAlloc, Config, ConfigError, CrystallineL, Ebr, Family, Hyaline1, Hyaline1S, Leak, Linked, NodeAlloc,
    RegistryError,
};
use proptest::prelude::*;

#[derive(Clone, Default)]
struct Counting {
    live: Arc<AtomicU64>,
    total: Arc<AtomicU64>,
}

unsafe impl<N: Linked> NodeAlloc<N> for Counting {
    fn alloc(&self, node: N) -> NonNull<N> {
        self.live.fetch_add(1, SeqCst);
        self.total.fetch_add(1, SeqCst);
        NodeAlloc::alloc(&BoxAlloc, node)
    }

    unsafe fn dealloc(&self, node: NonNull<N>) {
        self.live.fetch_sub(1, SeqCst);
        NodeAlloc::dealloc(&BoxAlloc, node)
    }
}

/// Pushes and pops from several threads, drops the stack and returns
/// (allocated, still live).
fn stack_churn<F: Family>(threads: usize, ops: u64) -> (u64, u64) {
    let alloc = Counting::default();
    let config = Config { retire_freq: 4, epoch_freq: 4, ..Config::new(threads) };
    let stack = Stack::<u64, F, _>::with_alloc(config, alloc.clone()).unwrap();
    std::thread::scope(|s| {
        for t in 0..threads as u64 {
            let stack = &stack;
            s.spawn(move || {
                let mut h = stack.handle().unwrap();
                for i in 0..ops {
                    if i % 3 == 2 {
                        stack.pop(&mut h);
                    } else {
                        stack.push(&mut h, t << 32 | i);
                    }
                }
            });
        }
    });
    drop(stack);
    (alloc.total.load(SeqCst), alloc.live.load(SeqCst))
}

macro_rules! per_family {
    ($($name:ident: $f:ty,)*) => {$(
        mod $name {
            use super::*;

            #[test]
            fn every_node_freed_after_drop() {
                let (total, live) = stack_churn::<$f>(4, 5_000);
                assert_eq!(total, 4 * 5_000 - 4 * (5_000 / 3));
                assert_eq!(live, 0);
            }

            #[test]
            fn registry_is_bounded() {
                let list = SortedList::<u64, $f>::new(Config::new(2)).unwrap();
                let a = list.handle().unwrap();
                let b = list.handle().unwrap();
                assert_eq!(list.handle().err(), Some(RegistryError::Full { capacity: 2 }));
                drop(a);
                let _c = list.handle().unwrap();
                drop(b);
            }

            proptest! {
                #[test]
                fn list_matches_btreemap(ops in prop::collection::vec((0u8..3, 0u64..32, any::<u32>()), 0..200)) {
                    let mut list = SortedList::<u32, $f>::new(Config { retire_freq: 2, ..Config::new(1) }).unwrap();
                    let mut model = BTreeMap::new();
                    {
                        let mut h = list.handle().unwrap();
                        for &(op, k, v) in &ops {
                            match op {
                                0 => {
                                    let fresh = !model.contains_key(&k);
                                    if fresh {
                                        model.insert(k, v);
                                    }
                                    prop_assert_eq!(list.insert(&mut h, k, v), fresh);
                                }
                                1 => prop_assert_eq!(list.remove(&mut h, k), model.remove(&k)),
                                _ => prop_assert_eq!(list.get(&mut h, k), model.get(&k).copied()),
                            }
                        }
                    }
                    prop_assert_eq!(list.keys(), model.keys().copied().collect::<Vec<_>>());
                }

                #[test]
                fn map_matches_btreemap(ops in prop::collection::vec((0u8..3, any::<u64>(), any::<u32>()), 0..200)) {
                    let mut map = HashMap::<u32, $f>::with_buckets(Config::new(1), 3, BoxAlloc).unwrap();
                    let mut model = BTreeMap::new();
                    {
                        let mut h = map.handle().unwrap();
                        for &(op, k, v) in &ops {
                            let k = k % 64;
                            match op {
                                0 => {
                                    let fresh = !model.contains_key(&k);
                                    if fresh {
                                        model.insert(k, v);
                                    }
                                    prop_assert_eq!(map.put(&mut h, k, v), fresh);
                                }
                                1 => prop_assert_eq!(map.remove(&mut h, k), model.remove(&k)),
                                _ => prop_assert_eq!(map.get(&mut h, k), model.get(&k).copied()),
                            }
                        }
                    }
                    prop_assert_eq!(map.keys(), model.keys().copied().collect::<Vec<_>>());
                }

                #[test]
                fn stack_matches_vec(ops in prop::collection::vec(prop::option::of(any::<u64>()), 0..200)) {
                    let stack = Stack::<u64, $f>::new(Config { retire_freq: 2, ..Config::new(1) }).unwrap();
                    let mut model = Vec::new();
                    let mut h = stack.handle().unwrap();
                    for op in ops {
                        match op {
                            Some(v) => {
                                stack.push(&mut h, v);
                                model.push(v);
                            }
                            None => prop_assert_eq!(stack.pop(&mut h), model.pop()),
                        }
                    }
                }
            }
        }
    )*};
}

per_family! {
    ebr: Ebr,
    hyaline1: Hyaline1,
    hyaline1s: Hyaline1S,
    crystalline_l: CrystallineL,
}

#[cfg(target_arch = "x86_64")]
per_family! {
    crystalline_w: crystalline::CrystallineW,
}

#[test]
fn leak_never_frees_retired_nodes() {
    let (total, live) = stack_churn::<Leak>(2, 3_000);
    let popped = 2 * (3_000 / 3);
    assert_eq!(total, 2 * 3_000 - popped);
    assert!(live >= popped, "{live} live, {popped} popped");
}

#[test]
fn bad_configs_are_rejected() {
    let cases = [
        (Config::new(0), ConfigError::ZeroThreads),
        (Config { max_idx: 0, ..Config::new(1) }, ConfigError::ZeroIndices),
        (Config { epoch_freq: 0, ..Config::new(1) }, ConfigError::ZeroEpochFreq),
        (Config { retire_freq: 0, ..Config::new(1) }, ConfigError::ZeroRetireFreq),
        (Config { max_tries: 1, ..Config::new(1) }, ConfigError::MaxTries(1)),
    ];
    for (c, e) in cases {
        assert_eq!(Stack::<u64, CrystallineL>::new(c).err(), Some(e));
    }
    let one = Config { max_idx: 1, ..Config::new(1) };
    assert!(matches!(
        SortedList::<u64, CrystallineL>::new(one).err(),
        Some(ConfigError::TooFewIndices { needed: 3, configured: 1 })
    ));
}
