//! A deliberately unsafe scheme that frees nodes as soon as they are
//! retired. It exists to show that the canary checks catch premature frees.

use std::marker::PhantomData;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering::SeqCst};

use crystalline::{Config, ConfigError, Family, Linked, NodeAlloc, Registry, RegistryError, Scheme, Snapshot};

#[derive(Debug)]
pub enum Broken {}

impl Family for Broken {
    const NAME: &'static str = "broken";
    type Domain<N: Linked, A: NodeAlloc<N>> = BrokenDomain<N, A>;
}

pub struct BrokenDomain<N, A> {
    config: Config,
    alloc: A,
    registry: Registry<()>,
    retired: AtomicU64,
    _node: PhantomData<fn(N) -> N>,
}

#[derive(Debug)]
pub struct BrokenLocal {
    tid: usize,
}

// Safety: none. This scheme violates the contract on purpose and must only
// be used with an allocator that never releases memory.
unsafe impl<N: Linked, A: NodeAlloc<N>> Scheme for BrokenDomain<N, A> {
    type Node = N;
    type Alloc = A;
    type Local = BrokenLocal;

    const NAME: &'static str = "broken";

    fn new(config: Config, alloc: A) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(BrokenDomain {
            config,
            alloc,
            registry: Registry::new(config.max_threads),
            retired: AtomicU64::new(0),
            _node: PhantomData,
        })
    }

    fn config(&self) -> &Config {
        &self.config
    }

    fn allocator(&self) -> &A {
        &self.alloc
    }

    fn attach(&self) -> Result<BrokenLocal, RegistryError> {
        let (tid, _) = self.registry.register()?;
        Ok(BrokenLocal { tid })
    }

    fn detach(&self, local: BrokenLocal) {
        self.registry.unregister(local.tid, None).expect("handle owns its slot");
    }

    fn tid(local: &BrokenLocal) -> usize {
        local.tid
    }

    fn begin(&self, _: &mut BrokenLocal) {}

    unsafe fn protect(&self, _: &mut BrokenLocal, src: &AtomicUsize, _: usize, _: usize) -> usize {
        crystalline::sched::point();
        src.load(SeqCst)
    }

    fn end(&self, _: &mut BrokenLocal) {}

    fn alloc_node(&self, _: &mut BrokenLocal, node: N) -> NonNull<N> {
        self.alloc.alloc(node)
    }

    unsafe fn retire(&self, _: &mut BrokenLocal, node: NonNull<N>) {
        crystalline::sched::point();
        self.retired.fetch_add(1, SeqCst);
        self.alloc.dealloc(node);
    }

    fn local_unreclaimed(_: &BrokenLocal) -> i64 {
        0
    }

    fn snapshot(&self) -> Snapshot {
        let n = self.retired.load(SeqCst);
        let mut s = Snapshot::default();
        s.retired = n;
        s.freed = n;
        s
    }
}
