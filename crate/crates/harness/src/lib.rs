//! Benchmark driver and verification harness for the reclamation schemes in
//! the `crystalline` crate.
//!
//! - [`bench`](mod@bench) runs timed randomized workloads and writes CSV.
//! - [`bench_cli`] is the `smr-bench` command line.
//! - [`stress`] runs canary and stalled-thread checks on real threads.
//! - [`explore`] drives small scripted scenarios through controlled schedules.
//! - [`lincheck`] records short concurrent histories and checks them.

pub mod bench;
pub mod bench_cli;
pub mod broken;
pub mod canary;
pub mod error;
pub mod explore;
pub mod hooks;
pub mod kinds;
pub mod lincheck;
pub mod stress;
pub mod target;
pub mod workload;

pub use error::HarnessError;
pub use kinds::{DsKind, SchemeKind, Workload};
