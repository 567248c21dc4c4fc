//! Memory reclamation for lock-free data structures based on batches of
//! retired nodes whose reference counts are distributed to reservations at
//! retirement time.
//!
//! The crate provides several interchangeable schemes behind the [`Scheme`]
//! trait:
//!
//! * [`Hyaline1`] and [`Hyaline1S`], single-list reference counting schemes.
//! * [`CrystallineL`], a lock-free scheme with per-index reservations and
//!   bounded memory usage.
//! * [`CrystallineW`], the wait-free variant using tagged double-width
//!   reservations and a helping slow path (x86-64 only).
//! * [`Ebr`], a three-epoch baseline, and [`Leak`], which never frees.
//!
//! Each scheme owns a domain of nodes of one type. Nodes begin with a
//! [`NodeHeader`] and are allocated through a [`NodeAlloc`]. Threads register
//! with a domain and obtain a [`Handle`]:
//!
//! ```
//! use core::sync::atomic::AtomicUsize;
//! use crystalline::{BoxAlloc, Config, CrystallineLDomain, Linked, NodeHeader, Scheme};
//!
//! #[repr(C)]
//! struct Node {
//!     header: NodeHeader,
//!     value: u64,
//! }
//! unsafe impl Linked for Node {}
//!
//! let domain = CrystallineLDomain::<Node, BoxAlloc>::new(Config::new(4), BoxAlloc).unwrap();
//! let mut handle = domain.handle().unwrap();
//!
//! let node = handle.alloc(Node { header: NodeHeader::new(), value: 7 });
//! let shared = AtomicUsize::new(node.as_ptr() as usize);
//!
//! handle.begin();
//! let p = unsafe { handle.protect(&shared, 0, 0) } as *const Node;
//! assert_eq!(unsafe { (*p).value }, 7);
//! handle.end();
//!
//! shared.store(0, core::sync::atomic::Ordering::SeqCst);
//! unsafe { handle.retire(node) };
//! ```
//!
//! The [`ds`] module contains a Treiber stack, a Harris-Michael sorted list
//! and a hash map written against the trait.
#![no_std]

#[cfg(not(target_pointer_width = "64"))]
compile_error!("crystalline requires a 64-bit target");

extern crate alloc;
#[cfg(test)]
extern crate std;

mod atomic;
mod batch;
mod table;

pub mod config;
pub mod crystalline_l;
#[cfg(target_arch = "x86_64")]
pub mod crystalline_w;
pub mod ds;
pub mod ebr;
pub mod header;
pub mod hyaline;
pub mod registry;
pub mod sched;
pub mod scheme;
pub mod stats;

pub use config::{Config, ConfigError};
pub use crystalline_l::{CrystallineL, CrystallineLDomain};
#[cfg(target_arch = "x86_64")]
pub use crystalline_w::{CrystallineW, CrystallineWDomain};
pub use ebr::{Ebr, EbrDomain, Leak, LeakDomain};
pub use header::{BoxAlloc, Linked, NodeAlloc, NodeHeader, INVALID, REFC_PROTECT, REFC_PROTECT_HANDOVER};
pub use hyaline::{Hyaline1, Hyaline1Domain, Hyaline1S, Hyaline1SDomain};
pub use registry::{Registry, RegistryError};
pub use scheme::{Family, Handle, Scheme};
pub use stats::{Event, LoopCounters, LoopKind, Snapshot};
