//! Deterministic per-thread operation streams.
//!
//! Each thread draws from ChaCha8 seeded with the run seed, on its own
//! stream, so the sequence of attempted operations of a thread depends only
//! on the seed and the thread index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kinds::Workload;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Insert(u64),
    Delete(u64),
    Get(u64),
}

/// Generator for a thread's operations.
#[derive(Clone, Debug)]
pub struct OpStream {
    rng: ChaCha8Rng,
    workload: Workload,
    key_range: u64,
}

impl OpStream {
    /// Stream `stream` of the run seeded with `seed`. Keys are uniform in
    /// `0..key_range`.
    pub fn new(seed: u64, stream: u64, workload: Workload, key_range: u64) -> OpStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        OpStream { rng, workload, key_range: key_range.max(1) }
    }

    pub fn key(&mut self) -> u64 {
        self.rng.gen_range(0..self.key_range)
    }
}

impl Iterator for OpStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        let k = self.key();
        let p = self.rng.gen_range(0..100u32);
        Some(match self.workload {
            Workload::Write if p < 50 => Op::Insert(k),
            Workload::Write => Op::Delete(k),
            Workload::Read if p < 90 => Op::Get(k),
            Workload::Read => Op::Insert(k),
        })
    }
}

/// Stream index of worker `thread` in repeat `repeat`. Stream 0 is left for
/// the prefill.
pub fn stream_id(repeat: usize, thread: usize) -> u64 {
    ((repeat as u64) << 32) | (thread as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn same_seed_same_ops(seed in any::<u64>(), s in 0u64..64) {
            let a: Vec<Op> = OpStream::new(seed, s, Workload::Write, 100).take(200).collect();
            let b: Vec<Op> = OpStream::new(seed, s, Workload::Write, 100).take(200).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn keys_in_range(seed in any::<u64>(), range in 1u64..1000) {
            for op in OpStream::new(seed, 1, Workload::Read, range).take(100) {
                let k = match op { Op::Insert(k) | Op::Delete(k) | Op::Get(k) => k };
                prop_assert!(k < range);
            }
        }
    }

    #[test]
    fn streams_differ() {
        let a: Vec<Op> = OpStream::new(7, 1, Workload::Write, 1 << 20).take(50).collect();
        let b: Vec<Op> = OpStream::new(7, 2, Workload::Write, 1 << 20).take(50).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn mix_proportions() {
        // Binomial(20000, p): four standard deviations is under 1.5 points.
        let n = 20_000;
        let w = OpStream::new(1, 1, Workload::Write, 10).take(n).filter(|o| matches!(o, Op::Insert(_))).count();
        assert!((w as f64 / n as f64 - 0.5).abs() < 0.015, "{w}");
        let r = OpStream::new(1, 1, Workload::Read, 10).take(n).filter(|o| matches!(o, Op::Get(_))).count();
        assert!((r as f64 / n as f64 - 0.9).abs() < 0.01, "{r}");
    }
}
