//! A uniform set-like view of the data structures, and construction of a
//! structure for a scheme and structure named at run time.

use crystalline::ds::{HashMap, ListNode, SortedList, Stack, StackNode};
use crystalline::{BoxAlloc, Config, Family, Handle, NodeAlloc, RegistryError, Scheme, Snapshot};

use crate::broken::Broken;
use crate::canary::{AllocReport, CanaryAlloc, Probe};
use crate::error::HarnessError;
use crate::kinds::{DsKind, SchemeKind};

/// Keyed operations on a shared structure. For the stack, `insert` pushes
/// the key, `delete` pops any element and `get` is not supported.
pub trait Target: Sync {
    type Handle<'a>
    where
        Self: 'a;

    const DS: DsKind;

    fn handle(&self) -> Result<Self::Handle<'_>, RegistryError>;
    fn insert(&self, h: &mut Self::Handle<'_>, key: u64) -> bool;
    fn delete(&self, h: &mut Self::Handle<'_>, key: u64) -> bool;
    fn get(&self, h: &mut Self::Handle<'_>, key: u64) -> bool;
    fn snapshot(&self) -> Snapshot;
    /// Retired minus freed by the calling thread; may be negative.
    fn local_unreclaimed(&self, h: &Self::Handle<'_>) -> i64;
    fn poisoned_reads(&self) -> u64;
    fn config(&self) -> Config;

    /// See [`Scheme::verify_quiescent`].
    fn verify_quiescent(&self) -> Result<(), String>;

    /// Starts an operation and protects the structure's entry point under
    /// index 0, as a reader about to stall would.
    fn stall_point(&self, h: &mut Self::Handle<'_>);
}

type StackDomain<F, A> = <F as Family>::Domain<StackNode<u64>, A>;
type ListDomain<F, A> = <F as Family>::Domain<ListNode<u64>, A>;

impl<F: Family + 'static, A: NodeAlloc<StackNode<u64>> + 'static> Target for Stack<u64, F, A> {
    type Handle<'a>
        = Handle<'a, StackDomain<F, A>>
    where
        Self: 'a;

    const DS: DsKind = DsKind::Stack;

    fn handle(&self) -> Result<Self::Handle<'_>, RegistryError> {
        Stack::handle(self)
    }

    fn insert(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        self.push(h, key);
        true
    }

    fn delete(&self, h: &mut Self::Handle<'_>, _: u64) -> bool {
        self.pop(h).is_some()
    }

    fn get(&self, _: &mut Self::Handle<'_>, _: u64) -> bool {
        unimplemented!("the stack has no lookup")
    }

    fn local_unreclaimed(&self, h: &Self::Handle<'_>) -> i64 {
        h.local_unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.domain().snapshot()
    }

    fn poisoned_reads(&self) -> u64 {
        Stack::poisoned_reads(self)
    }

    fn config(&self) -> Config {
        *self.domain().config()
    }

    fn verify_quiescent(&self) -> Result<(), String> {
        self.domain().verify_quiescent()
    }

    fn stall_point(&self, h: &mut Self::Handle<'_>) {
        stall_on_root(h)
    }
}

impl<F: Family + 'static, A: NodeAlloc<ListNode<u64>> + 'static> Target for SortedList<u64, F, A> {
    type Handle<'a>
        = Handle<'a, ListDomain<F, A>>
    where
        Self: 'a;

    const DS: DsKind = DsKind::List;

    fn handle(&self) -> Result<Self::Handle<'_>, RegistryError> {
        SortedList::handle(self)
    }

    fn insert(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        SortedList::insert(self, h, key, key)
    }

    fn delete(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        self.remove(h, key).is_some()
    }

    fn get(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        SortedList::get(self, h, key).is_some()
    }

    fn local_unreclaimed(&self, h: &Self::Handle<'_>) -> i64 {
        h.local_unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.domain().snapshot()
    }

    fn poisoned_reads(&self) -> u64 {
        SortedList::poisoned_reads(self)
    }

    fn config(&self) -> Config {
        *self.domain().config()
    }

    fn verify_quiescent(&self) -> Result<(), String> {
        self.domain().verify_quiescent()
    }

    fn stall_point(&self, h: &mut Self::Handle<'_>) {
        stall_on_root(h)
    }
}

impl<F: Family + 'static, A: NodeAlloc<ListNode<u64>> + 'static> Target for HashMap<u64, F, A> {
    type Handle<'a>
        = Handle<'a, ListDomain<F, A>>
    where
        Self: 'a;

    const DS: DsKind = DsKind::HashMap;

    fn handle(&self) -> Result<Self::Handle<'_>, RegistryError> {
        HashMap::handle(self)
    }

    fn insert(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        self.put(h, key, key)
    }

    fn delete(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        self.remove(h, key).is_some()
    }

    fn get(&self, h: &mut Self::Handle<'_>, key: u64) -> bool {
        HashMap::get(self, h, key).is_some()
    }

    fn local_unreclaimed(&self, h: &Self::Handle<'_>) -> i64 {
        h.local_unreclaimed()
    }

    fn snapshot(&self) -> Snapshot {
        self.domain().snapshot()
    }

    fn poisoned_reads(&self) -> u64 {
        HashMap::poisoned_reads(self)
    }

    fn config(&self) -> Config {
        *self.domain().config()
    }

    fn verify_quiescent(&self) -> Result<(), String> {
        self.domain().verify_quiescent()
    }

    fn stall_point(&self, h: &mut Self::Handle<'_>) {
        stall_on_root(h)
    }
}

/// Protects a private root so the reservation is active with the current
/// era. Which node is protected does not matter for what the scheme must
/// retain: the reservation covers every node born up to its era.
fn stall_on_root<S: Scheme>(h: &mut Handle<'_, S>) {
    static ROOT: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    h.begin();
    // Safety: inside an operation; index 0 exists for every structure.
    unsafe { h.protect(&ROOT, 0, 0) };
}

/// Code to run against a structure whose type is chosen at run time.
pub trait Visit {
    type Out;
    fn visit<T: Target>(self, t: &T) -> Self::Out;
}

/// Which allocator backs the structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocKind {
    System,
    Canary,
}

/// Parameters for building a structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Build {
    pub scheme: SchemeKind,
    pub ds: DsKind,
    pub config: Config,
    /// Bucket count exponent for the hash map.
    pub bucket_bits: u32,
    pub alloc: AllocKind,
}

/// Builds the structure, runs `v` on it, drops it and returns the visitor's
/// result with the allocator report taken after the teardown.
pub fn with_target<V: Visit>(b: Build, v: V) -> Result<(V::Out, Option<AllocReport>), HarnessError> {
    match b.scheme {
        SchemeKind::None => with_family::<crystalline::Leak, V>(b, v),
        SchemeKind::Ebr => with_family::<crystalline::Ebr, V>(b, v),
        SchemeKind::Hyaline1 => with_family::<crystalline::Hyaline1, V>(b, v),
        SchemeKind::Hyaline1S => with_family::<crystalline::Hyaline1S, V>(b, v),
        SchemeKind::CrystallineL => with_family::<crystalline::CrystallineL, V>(b, v),
        SchemeKind::CrystallineW => with_family::<crystalline::CrystallineW, V>(b, v),
        SchemeKind::Broken => {
            if b.alloc != AllocKind::Canary {
                return Err(HarnessError::Invalid("the broken scheme needs the canary allocator".into()));
            }
            with_family::<Broken, V>(b, v)
        }
    }
}

fn with_family<F: Family + 'static, V: Visit>(b: Build, v: V) -> Result<(V::Out, Option<AllocReport>), HarnessError> {
    match b.alloc {
        AllocKind::System => run::<F, V, _, _>(b, v, BoxAlloc, BoxAlloc),
        AllocKind::Canary => run::<F, V, _, _>(b, v, CanaryAlloc::new(), CanaryAlloc::new()),
    }
}

fn run<F, V, SA, LA>(
    b: Build,
    v: V,
    stack_alloc: SA,
    list_alloc: LA,
) -> Result<(V::Out, Option<AllocReport>), HarnessError>
where
    F: Family + 'static,
    V: Visit,
    SA: NodeAlloc<StackNode<u64>> + Probe + Clone + 'static,
    LA: NodeAlloc<ListNode<u64>> + Probe + Clone + 'static,
{
    let (out, report) = match b.ds {
        DsKind::Stack => {
            let t = Stack::<u64, F, SA>::with_alloc(b.config, stack_alloc.clone())?;
            let out = v.visit(&t);
            drop(t);
            (out, stack_alloc.report())
        }
        DsKind::List => {
            let t = SortedList::<u64, F, LA>::with_alloc(b.config, list_alloc.clone())?;
            let out = v.visit(&t);
            drop(t);
            (out, list_alloc.report())
        }
        DsKind::HashMap => {
            let t = HashMap::<u64, F, LA>::with_buckets(b.config, b.bucket_bits, list_alloc.clone())?;
            let out = v.visit(&t);
            drop(t);
            (out, list_alloc.report())
        }
    };
    Ok((out, report))
}
