//! Scheme parameters.

use core::fmt;

/// Tunable parameters shared by all schemes.
///
/// Not every scheme reads every field: `max_idx` only matters for the
/// Crystalline schemes, `epoch_freq` for era-based schemes and `max_tries`
/// for Crystalline-W.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Config {
    /// Size of the thread registry.
    pub max_threads: usize,
    /// Reservation indices per thread.
    pub max_idx: usize,
    /// Allocations per global era increment.
    pub epoch_freq: u64,
    /// Retirements per reclamation attempt.
    pub retire_freq: usize,
    /// Fast-path budget of `protect` before the wait-free slow path. The
    /// fast path makes `max_tries - 1` attempts.
    pub max_tries: usize,
}

impl Config {
    pub const DEFAULT_MAX_IDX: usize = 3;
    pub const DEFAULT_EPOCH_FREQ: u64 = 110;
    pub const DEFAULT_RETIRE_FREQ: usize = 120;
    pub const DEFAULT_MAX_TRIES: usize = 16;

    /// Default parameters for a registry of `max_threads` threads.
    pub const fn new(max_threads: usize) -> Config {
        Config {
            max_threads,
            max_idx: Self::DEFAULT_MAX_IDX,
            epoch_freq: Self::DEFAULT_EPOCH_FREQ,
            retire_freq: Self::DEFAULT_RETIRE_FREQ,
            max_tries: Self::DEFAULT_MAX_TRIES,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_threads == 0 {
            return Err(ConfigError::ZeroThreads);
        }
        if self.max_idx == 0 {
            return Err(ConfigError::ZeroIndices);
        }
        if self.epoch_freq == 0 {
            return Err(ConfigError::ZeroEpochFreq);
        }
        if self.retire_freq == 0 {
            return Err(ConfigError::ZeroRetireFreq);
        }
        if self.max_tries < 2 {
            return Err(ConfigError::MaxTries(self.max_tries));
        }
        Ok(())
    }

    /// Nodes a Crystalline batch needs so that `try_retire` cannot run out
    /// of nodes: one per reservation slot plus the REFS node.
    pub fn full_batch(&self, indices_per_thread: usize) -> usize {
        self.max_threads * indices_per_thread + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigError {
    ZeroThreads,
    ZeroIndices,
    ZeroEpochFreq,
    ZeroRetireFreq,
    MaxTries(usize),
    /// A data structure needs more reservation indices than configured.
    TooFewIndices {
        needed: usize,
        configured: usize,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::ZeroThreads => f.write_str("max_threads must be at least 1"),
            ConfigError::ZeroIndices => f.write_str("max_idx must be at least 1"),
            ConfigError::ZeroEpochFreq => f.write_str("epoch_freq must be at least 1"),
            ConfigError::ZeroRetireFreq => f.write_str("retire_freq must be at least 1"),
            ConfigError::MaxTries(n) => write!(f, "max_tries must be at least 2, got {n}"),
            ConfigError::TooFewIndices { needed, configured } => {
                write!(f, "data structure needs {needed} reservation indices, max_idx is {configured}")
            }
        }
    }
}

impl core::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::new(8);
        assert_eq!(c.max_idx, 3);
        assert_eq!(c.epoch_freq, 110);
        assert_eq!(c.retire_freq, 120);
        assert_eq!(c.max_tries, 16);
        assert_eq!(c.validate(), Ok(()));
    }

    #[test]
    fn rejects_degenerate() {
        let mut c = Config::new(0);
        assert_eq!(c.validate(), Err(ConfigError::ZeroThreads));
        c.max_threads = 1;
        c.max_tries = 1;
        assert_eq!(c.validate(), Err(ConfigError::MaxTries(1)));
        c.max_tries = 2;
        c.retire_freq = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroRetireFreq));
    }

    #[test]
    fn full_batch_sizes() {
        let mut c = Config::new(4);
        c.max_idx = 2;
        assert_eq!(c.full_batch(c.max_idx), 9);
        assert_eq!(c.full_batch(c.max_idx + 2), 17);
    }
}
