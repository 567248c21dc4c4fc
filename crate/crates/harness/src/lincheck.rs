//! Recording of concurrent histories and a linearizability checker.
//!
//! The checker is the Wing–Gong search with Lowe's memoization of
//! (linearized set, model state) pairs. Map histories are split by key and
//! each key is checked on its own.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering::SeqCst};
use std::sync::Barrier;

use crystalline::ds::{HashMap, Stack};
use crystalline::{Config, CrystallineW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::HarnessError;
use crate::hooks;

/// A sequential specification.
pub trait Model: Clone + Eq + Hash {
    type Op: Copy + std::fmt::Debug;
    type Ret: Copy + PartialEq + std::fmt::Debug;
    fn apply(&mut self, op: Self::Op) -> Self::Ret;
}

/// One completed call. `invoke < respond`; stamps are unique across the
/// history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Call<O, R> {
    pub thread: usize,
    pub op: O,
    pub ret: R,
    pub invoke: u64,
    pub respond: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StackOp {
    Push(u64),
    Pop,
}

/// Stack specification; `Push` returns `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct StackModel(pub Vec<u64>);

impl Model for StackModel {
    type Op = StackOp;
    type Ret = Option<u64>;

    fn apply(&mut self, op: StackOp) -> Option<u64> {
        match op {
            StackOp::Push(v) => {
                self.0.push(v);
                None
            }
            StackOp::Pop => self.0.pop(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapOp {
    Put(u64, u64),
    Remove(u64),
    Get(u64),
}

impl MapOp {
    pub fn key(self) -> u64 {
        match self {
            MapOp::Put(k, _) | MapOp::Remove(k) | MapOp::Get(k) => k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapRet {
    Inserted(bool),
    Value(Option<u64>),
}

/// Specification of a single key of an insert-if-absent map.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct KeyModel(pub Option<u64>);

impl Model for KeyModel {
    type Op = MapOp;
    type Ret = MapRet;

    fn apply(&mut self, op: MapOp) -> MapRet {
        match op {
            MapOp::Put(_, v) => {
                let fresh = self.0.is_none();
                if fresh {
                    self.0 = Some(v);
                }
                MapRet::Inserted(fresh)
            }
            MapOp::Remove(_) => MapRet::Value(self.0.take()),
            MapOp::Get(_) => MapRet::Value(self.0),
        }
    }
}

#[derive(Clone, Copy)]
struct Entry {
    call: usize,
    is_return: bool,
    prev: usize,
    next: usize,
    /// For a call entry, the index of its return entry.
    partner: usize,
}

/// Whether some linearization of `calls` is accepted by `init`.
pub fn check<M: Model>(init: M, calls: &[Call<M::Op, M::Ret>]) -> bool {
    check_within(init, calls, usize::MAX).expect("unbounded search")
}

/// As [`check`], giving up with `None` after `budget` distinct search
/// configurations.
pub fn check_within<M: Model>(init: M, calls: &[Call<M::Op, M::Ret>], budget: usize) -> Option<bool> {
    let n = calls.len();
    if n == 0 {
        return Some(true);
    }
    let mut order: Vec<(u64, usize, bool)> = Vec::with_capacity(2 * n);
    for (i, c) in calls.iter().enumerate() {
        debug_assert!(c.invoke < c.respond);
        order.push((c.invoke, i, false));
        order.push((c.respond, i, true));
    }
    order.sort_unstable();
    // Slot 0 is the head sentinel; entry k lives at k + 1.
    let mut e = vec![Entry { call: usize::MAX, is_return: false, prev: 0, next: 1, partner: 0 }; 2 * n + 1];
    let mut ret_at = vec![0; n];
    for (k, &(_, call, is_return)) in order.iter().enumerate() {
        e[k + 1] = Entry { call, is_return, prev: k, next: if k + 1 == 2 * n { 0 } else { k + 2 }, partner: 0 };
        if is_return {
            ret_at[call] = k + 1;
        }
    }
    for k in 1..=2 * n {
        if !e[k].is_return {
            e[k].partner = ret_at[e[k].call];
        }
    }
    fn unlink(e: &mut [Entry], k: usize) {
        let (p, n) = (e[k].prev, e[k].next);
        e[p].next = n;
        e[n].prev = p;
    }
    fn relink(e: &mut [Entry], k: usize) {
        let (p, n) = (e[k].prev, e[k].next);
        e[p].next = k;
        e[n].prev = k;
    }

    let words = n.div_ceil(64);
    let mut linearized = vec![0u64; words];
    let mut seen: HashSet<u128> = HashSet::new();
    let mut stack: Vec<(usize, M)> = Vec::new();
    let mut state = init;
    let mut cur = e[0].next;
    loop {
        if e[0].next == 0 {
            return Some(true);
        }
        if !e[cur].is_return {
            let c = &calls[e[cur].call];
            let mut next_state = state.clone();
            let ok = next_state.apply(c.op) == c.ret;
            let bit = (e[cur].call / 64, 1u64 << (e[cur].call % 64));
            if ok {
                linearized[bit.0] |= bit.1;
                if seen.insert(fingerprint(&linearized, &next_state)) {
                    if seen.len() > budget {
                        return None;
                    }
                    stack.push((cur, std::mem::replace(&mut state, next_state)));
                    let ret = e[cur].partner;
                    unlink(&mut e, cur);
                    unlink(&mut e, ret);
                    cur = e[0].next;
                    continue;
                }
                linearized[bit.0] &= !bit.1;
            }
            cur = e[cur].next;
        } else {
            // A pending return: the calls before it cannot be ordered.
            let Some((top, prev_state)) = stack.pop() else {
                return Some(false);
            };
            state = prev_state;
            let call = e[top].call;
            linearized[call / 64] &= !(1u64 << (call % 64));
            let ret = e[top].partner;
            relink(&mut e, ret);
            relink(&mut e, top);
            cur = e[top].next;
        }
    }
}

/// 128-bit digest of a search configuration. A collision can only prune a
/// branch, so it may turn a pass into a failure but never the reverse.
fn fingerprint<M: Hash>(linearized: &[u64], state: &M) -> u128 {
    let half = |salt: u64| {
        let mut h = std::hash::DefaultHasher::new();
        salt.hash(&mut h);
        linearized.hash(&mut h);
        state.hash(&mut h);
        h.finish() as u128
    };
    half(0x5851_f42d_4c95_7f2d) << 64 | half(0x1405_7b7e_f767_814f)
}

/// Splits a map history by key and checks every key from empty. Returns the
/// first key whose history is not linearizable.
pub fn check_map(calls: &[Call<MapOp, MapRet>]) -> Result<(), u64> {
    let mut by_key: std::collections::BTreeMap<u64, Vec<Call<MapOp, MapRet>>> = Default::default();
    for c in calls {
        by_key.entry(c.op.key()).or_default().push(*c);
    }
    for (k, cs) in by_key {
        if !check(KeyModel::default(), &cs) {
            return Err(k);
        }
    }
    Ok(())
}

/// Parameters of a recorded history.
#[derive(Clone, Copy, Debug)]
pub struct RecordSpec {
    pub threads: usize,
    /// Operations in the whole history.
    pub ops: usize,
    /// Keys for the map, drawn from `0..key_range`.
    pub key_range: u64,
    pub seed: u64,
    /// Yield at about one scheduling point in this many; 0 disables.
    pub chaos_period: u64,
}

impl RecordSpec {
    pub fn new(seed: u64) -> RecordSpec {
        RecordSpec { threads: 4, ops: 1000, key_range: 8, seed, chaos_period: 16 }
    }

    fn config(&self) -> Config {
        Config { epoch_freq: 4, retire_freq: 4, ..Config::new(self.threads) }
    }
}

/// Per-thread call log stamped from a shared clock.
pub struct Log<'a, O, R> {
    clock: &'a AtomicU64,
    thread: usize,
    calls: Vec<Call<O, R>>,
}

impl<O: Copy, R> Log<'_, O, R> {
    pub fn call(&mut self, op: O, run: impl FnOnce(O) -> R) {
        let invoke = self.clock.fetch_add(1, SeqCst);
        let ret = run(op);
        let respond = self.clock.fetch_add(1, SeqCst);
        self.calls.push(Call { thread: self.thread, op, ret, invoke, respond });
    }
}

/// Runs `body(tid, ops, rng, log)` on every thread and concatenates the logs.
fn record<O: Copy + Send, R: Send>(
    spec: &RecordSpec,
    body: impl Fn(usize, usize, &mut ChaCha8Rng, &mut Log<'_, O, R>) + Sync,
) -> Vec<Call<O, R>> {
    let clock = AtomicU64::new(0);
    let start = Barrier::new(spec.threads);
    let per_thread = spec.ops / spec.threads;
    std::thread::scope(|s| {
        let workers: Vec<_> = (0..spec.threads)
            .map(|tid| {
                let (clock, start, body) = (&clock, &start, &body);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(tid as u64 + 1);
                    let _chaos = (spec.chaos_period > 0).then(|| hooks::chaos(rng.gen(), spec.chaos_period));
                    let mut log = Log { clock, thread: tid, calls: Vec::with_capacity(per_thread) };
                    start.wait();
                    body(tid, per_thread, &mut rng, &mut log);
                    log.calls
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("recorder")).collect()
    })
}

/// Records a history of pushes and pops on a Crystalline-W stack. Pushed
/// values are unique. Pops outnumber pushes so the stack stays shallow,
/// which keeps the search small and empty pops frequent.
pub fn record_stack(spec: &RecordSpec) -> Result<Vec<Call<StackOp, Option<u64>>>, HarnessError> {
    let stack = Stack::<u64, CrystallineW>::new(spec.config())?;
    Ok(record(spec, |tid, n, rng, log| {
        let mut h = stack.handle().expect("slot per thread");
        for i in 0..n as u64 {
            let op = if rng.gen_bool(0.4) { StackOp::Push(((tid as u64) << 32) | i) } else { StackOp::Pop };
            log.call(op, |op| match op {
                StackOp::Push(v) => {
                    stack.push(&mut h, v);
                    None
                }
                StackOp::Pop => stack.pop(&mut h),
            });
        }
    }))
}

/// Records a history of a Crystalline-W hash map over a few keys.
pub fn record_map(spec: &RecordSpec) -> Result<Vec<Call<MapOp, MapRet>>, HarnessError> {
    // Two buckets so that keys share lists.
    let map = HashMap::<u64, CrystallineW>::with_buckets(spec.config(), 1, crystalline::BoxAlloc)?;
    Ok(record(spec, |tid, n, rng, log| {
        let mut h = map.handle().expect("slot per thread");
        for i in 0..n as u64 {
            let k = rng.gen_range(0..spec.key_range);
            let op = match rng.gen_range(0..10) {
                0..=3 => MapOp::Put(k, ((tid as u64) << 32) | i),
                4..=6 => MapOp::Remove(k),
                _ => MapOp::Get(k),
            };
            log.call(op, |op| match op {
                MapOp::Put(k, v) => MapRet::Inserted(map.put(&mut h, k, v)),
                MapOp::Remove(k) => MapRet::Value(map.remove(&mut h, k)),
                MapOp::Get(k) => MapRet::Value(map.get(&mut h, k)),
            });
        }
    }))
}

/// Fraction of calls that overlap some call of another thread.
pub fn overlap<O, R>(calls: &[Call<O, R>]) -> f64 {
    if calls.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<&Call<O, R>> = calls.iter().collect();
    sorted.sort_by_key(|c| c.invoke);
    let mut hit = vec![false; sorted.len()];
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if sorted[j].invoke > sorted[i].respond {
                break;
            }
            if sorted[j].thread != sorted[i].thread {
                hit[i] = true;
                hit[j] = true;
            }
        }
    }
    hit.iter().filter(|&&h| h).count() as f64 / calls.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c<O, R>(thread: usize, op: O, ret: R, invoke: u64, respond: u64) -> Call<O, R> {
        Call { thread, op, ret, invoke, respond }
    }

    #[test]
    fn overlapping_calls_may_reorder() {
        // pop overlaps push and sees its value.
        let h = [c(0, StackOp::Push(7), None, 0, 3), c(1, StackOp::Pop, Some(7), 1, 2)];
        assert!(check(StackModel::default(), &h));
    }

    #[test]
    fn real_time_order_is_enforced() {
        // pop returns after push completed, yet sees empty.
        let h = [c(0, StackOp::Push(7), None, 0, 1), c(1, StackOp::Pop, None, 2, 3)];
        assert!(!check(StackModel::default(), &h));
    }

    #[test]
    fn lifo_order_is_enforced() {
        let h =
            [c(0, StackOp::Push(1), None, 0, 1), c(0, StackOp::Push(2), None, 2, 3), c(1, StackOp::Pop, Some(1), 4, 5)];
        assert!(!check(StackModel::default(), &h));
    }

    #[test]
    fn double_pop_of_one_value_rejected() {
        let h =
            [c(0, StackOp::Push(1), None, 0, 1), c(1, StackOp::Pop, Some(1), 2, 5), c(2, StackOp::Pop, Some(1), 3, 4)];
        assert!(!check(StackModel::default(), &h));
    }

    #[test]
    fn map_is_checked_per_key() {
        let ok = [
            c(0, MapOp::Put(1, 10), MapRet::Inserted(true), 0, 3),
            c(1, MapOp::Get(1), MapRet::Value(Some(10)), 1, 2),
            c(1, MapOp::Put(2, 20), MapRet::Inserted(true), 4, 5),
            c(0, MapOp::Remove(2), MapRet::Value(Some(20)), 6, 7),
        ];
        assert_eq!(check_map(&ok), Ok(()));
        let mut bad = ok;
        bad[3].ret = MapRet::Value(None);
        assert_eq!(check_map(&bad), Err(2));
    }

    fn stack_op() -> impl Strategy<Value = Option<u64>> {
        prop_oneof![Just(None), (0u64..1000).prop_map(Some)]
    }

    proptest! {
        #[test]
        fn sequential_histories_accepted(ops in prop::collection::vec(stack_op(), 0..60)) {
            let mut m = StackModel::default();
            let h: Vec<_> = ops.iter().enumerate().map(|(i, o)| {
                let op = o.map_or(StackOp::Pop, StackOp::Push);
                let ret = m.apply(op);
                c(i % 3, op, ret, 2 * i as u64, 2 * i as u64 + 1)
            }).collect();
            prop_assert!(check(StackModel::default(), &h));
        }

        #[test]
        fn wrong_return_in_sequential_history_rejected(
            ops in prop::collection::vec(stack_op(), 1..60),
            pick in any::<prop::sample::Index>(),
            forged in 1000u64..2000,
        ) {
            let mut m = StackModel::default();
            let mut h: Vec<_> = ops.iter().enumerate().map(|(i, o)| {
                let op = o.map_or(StackOp::Pop, StackOp::Push);
                let ret = m.apply(op);
                c(0, op, ret, 2 * i as u64, 2 * i as u64 + 1)
            }).collect();
            let i = pick.index(h.len());
            h[i].ret = match h[i].ret { Some(_) => None, None => Some(forged) };
            prop_assert!(!check(StackModel::default(), &h));
        }

        #[test]
        fn widening_intervals_keeps_linearizable(
            ops in prop::collection::vec(stack_op(), 0..40),
            slack in prop::collection::vec(0u64..6, 40),
        ) {
            // A sequential history stays linearizable when calls are stretched.
            let mut m = StackModel::default();
            let h: Vec<_> = ops.iter().enumerate().map(|(i, o)| {
                let op = o.map_or(StackOp::Pop, StackOp::Push);
                let ret = m.apply(op);
                let at = 16 * i as u64;
                c(i % 4, op, ret, at.saturating_sub(slack[i] * 2), at + 1 + slack[i] * 2)
            }).collect();
            prop_assert!(check(StackModel::default(), &h));
        }
    }
}
