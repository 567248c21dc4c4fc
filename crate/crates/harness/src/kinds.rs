//! Names of schemes, structures and workloads as used on the command line
//! and in CSV files.

use std::fmt;
use std::str::FromStr;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchemeKind {
    None,
    Ebr,
    Hyaline1,
    Hyaline1S,
    CrystallineL,
    CrystallineW,
    /// Frees on retire. Only for negative controls under the canary
    /// allocator; never benchmarked.
    Broken,
}

impl SchemeKind {
    /// Every real scheme, in reporting order.
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::None,
        SchemeKind::Ebr,
        SchemeKind::Hyaline1,
        SchemeKind::Hyaline1S,
        SchemeKind::CrystallineL,
        SchemeKind::CrystallineW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::None => "none",
            SchemeKind::Ebr => "ebr",
            SchemeKind::Hyaline1 => "hyaline1",
            SchemeKind::Hyaline1S => "hyaline1s",
            SchemeKind::CrystallineL => "crystalline-l",
            SchemeKind::CrystallineW => "crystalline-w",
            SchemeKind::Broken => "broken",
        }
    }

    /// Whether the scheme ever frees memory.
    pub fn reclaims(self) -> bool {
        self != SchemeKind::None
    }

    /// Whether a stalled thread leaves memory usage bounded.
    pub fn robust(self) -> bool {
        matches!(self, SchemeKind::Hyaline1S | SchemeKind::CrystallineL | SchemeKind::CrystallineW)
    }

    /// Reservation indices per thread that enter the memory bound.
    pub fn bound_indices(self, max_idx: usize) -> usize {
        match self {
            SchemeKind::CrystallineW => max_idx + 2,
            _ => max_idx,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        SchemeKind::ALL
            .into_iter()
            .chain([SchemeKind::Broken])
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Unknown("scheme", s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DsKind {
    Stack,
    List,
    HashMap,
}

impl DsKind {
    pub const ALL: [DsKind; 3] = [DsKind::Stack, DsKind::List, DsKind::HashMap];

    pub fn name(self) -> &'static str {
        match self {
            DsKind::Stack => "stack",
            DsKind::List => "list",
            DsKind::HashMap => "hashmap",
        }
    }

    /// Reservation indices the structure uses.
    pub fn indices(self) -> usize {
        match self {
            DsKind::Stack => 1,
            DsKind::List | DsKind::HashMap => 3,
        }
    }
}

impl fmt::Display for DsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DsKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        DsKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Unknown("data structure", s.to_owned()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Workload {
    /// 50% insert, 50% delete.
    Write,
    /// 90% get, 10% put.
    Read,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::Write => "write",
            Workload::Read => "read",
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "write" => Ok(Workload::Write),
            "read" => Ok(Workload::Read),
            _ => Err(HarnessError::Unknown("workload", s.to_owned())),
        }
    }
}
