use core::ops::Deref;
use core::sync::atomic::{AtomicIsize, AtomicU64, AtomicUsize, Ordering::SeqCst};

use crate::sched::point;

/// Shared-word accessors used by the schemes. Each access is preceded by a
/// scheduling point and is sequentially consistent.
pub(crate) trait Shared {
    type V: Copy + Eq;
    fn ld(&self) -> Self::V;
    fn st(&self, v: Self::V);
    fn xchg(&self, v: Self::V) -> Self::V;
    fn cas(&self, current: Self::V, new: Self::V) -> bool;
    fn faa(&self, delta: Self::V) -> Self::V;
}

macro_rules! shared {
    ($atomic:ty, $v:ty) => {
        impl Shared for $atomic {
            type V = $v;
            #[inline]
            fn ld(&self) -> $v {
                point();
                self.load(SeqCst)
            }
            #[inline]
            fn st(&self, v: $v) {
                point();
                self.store(v, SeqCst)
            }
            #[inline]
            fn xchg(&self, v: $v) -> $v {
                point();
                self.swap(v, SeqCst)
            }
            #[inline]
            fn cas(&self, current: $v, new: $v) -> bool {
                point();
                self.compare_exchange(current, new, SeqCst, SeqCst).is_ok()
            }
            #[inline]
            fn faa(&self, delta: $v) -> $v {
                point();
                self.fetch_add(delta, SeqCst)
            }
        }
    };
}

shared!(AtomicUsize, usize);
shared!(AtomicU64, u64);
shared!(AtomicIsize, isize);

/// Pads and aligns a value to 128 bytes so neighbours never share a line
/// (adjacent-line prefetching pulls pairs of 64-byte lines).
#[derive(Debug, Default)]
#[repr(align(128))]
pub(crate) struct CachePadded<T>(pub T);

impl<T> Deref for CachePadded<T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.0
    }
}

impl<T> core::ops::DerefMut for CachePadded<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.0
    }
}

/// A value/tag pair that can be updated with a double-width CAS.
#[cfg(target_arch = "x86_64")]
#[derive(Debug)]
#[repr(C, align(16))]
pub(crate) struct Pair {
    pub v: AtomicU64,
    pub t: AtomicU64,
}

#[cfg(target_arch = "x86_64")]
impl Pair {
    pub const fn new(v: u64, t: u64) -> Self {
        Pair { v: AtomicU64::new(v), t: AtomicU64::new(t) }
    }

    /// Atomic 16-byte snapshot.
    #[inline]
    pub fn load(&self) -> (u64, u64) {
        point();
        // Safety: `self` is 16-byte aligned and lives in writable memory.
        unsafe { cmpxchg16b(self as *const Pair as *mut u64, (0, 0), (0, 0)).0 }
    }

    #[inline]
    pub fn cas(&self, current: (u64, u64), new: (u64, u64)) -> bool {
        point();
        // Safety: as above.
        unsafe { cmpxchg16b(self as *const Pair as *mut u64, current, new).1 }
    }

    /// Atomic 16-byte store. Only used by a thread that owns the pair, so the
    /// loop finishes once it observes a stable value.
    #[inline]
    pub fn store(&self, new: (u64, u64)) {
        let mut cur = self.load();
        loop {
            point();
            // Safety: as above.
            let (seen, ok) = unsafe { cmpxchg16b(self as *const Pair as *mut u64, cur, new) };
            if ok {
                return;
            }
            cur = seen;
        }
    }
}

/// `lock cmpxchg16b` on the 16 bytes at `dst`. Returns the previous contents
/// and whether the exchange happened.
///
/// # Safety
///
/// `dst` must be valid for reads and writes of 16 bytes and 16-byte aligned.
#[cfg(target_arch = "x86_64")]
#[inline]
unsafe fn cmpxchg16b(dst: *mut u64, old: (u64, u64), new: (u64, u64)) -> ((u64, u64), bool) {
    let prev_lo: u64;
    let prev_hi: u64;
    let ok: u8;
    // rbx cannot be named as an operand, so the low half of `new` goes
    // through rsi and is swapped in and out around the instruction. Operands
    // use fixed registers so none of them can land in rbx.
    core::arch::asm!(
        "xchg rsi, rbx",
        "lock cmpxchg16b xmmword ptr [rdi]",
        "sete r8b",
        "mov rbx, rsi",
        inout("rsi") new.0 => _,
        in("rdi") dst,
        out("r8b") ok,
        inout("rax") old.0 => prev_lo,
        inout("rdx") old.1 => prev_hi,
        in("rcx") new.1,
        options(nostack),
    );
    ((prev_lo, prev_hi), ok != 0)
}

#[cfg(all(test, target_arch = "x86_64"))]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::vec::Vec;

    #[test]
    fn pair_cas_semantics() {
        let p = Pair::new(1, 2);
        assert_eq!(p.load(), (1, 2));
        assert!(!p.cas((1, 3), (9, 9)));
        assert!(!p.cas((0, 2), (9, 9)));
        assert_eq!(p.load(), (1, 2));
        assert!(p.cas((1, 2), (u64::MAX, 7)));
        assert_eq!(p.load(), (u64::MAX, 7));
        p.store((4, 5));
        assert_eq!(p.v.load(SeqCst), 4);
        assert_eq!(p.t.load(SeqCst), 5);
    }

    #[test]
    fn pair_never_tears() {
        // Both halves always move together: v == t at every observation.
        let p = Arc::new(Pair::new(0, 0));
        let writers: Vec<_> = (0..2)
            .map(|_| {
                let p = p.clone();
                std::thread::spawn(move || {
                    for _ in 0..20_000 {
                        loop {
                            let cur = p.load();
                            assert_eq!(cur.0, cur.1);
                            if p.cas(cur, (cur.0 + 1, cur.1 + 1)) {
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        for w in writers {
            w.join().unwrap();
        }
        assert_eq!(p.load(), (40_000, 40_000));
    }
}
