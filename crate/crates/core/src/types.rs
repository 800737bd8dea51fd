//! Identifiers shared across the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Cache line size in bytes. Fixed for every level.
pub const LINE_SIZE: u64 = 64;

/// A line-granular address (byte address divided by [`LINE_SIZE`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineAddr(pub u64);

impl LineAddr {
    pub fn from_byte(addr: u64) -> Self {
        LineAddr(addr / LINE_SIZE)
    }

    pub fn byte_addr(self) -> u64 {
        self.0 * LINE_SIZE
    }
}

impl fmt::Display for LineAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.byte_addr())
    }
}

/// Hardware thread index. Thread `t` runs on core `t / smt_ways`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadId(pub u32);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Speculation window identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowId(pub u64);

impl WindowId {
    /// Windows at or above this id are allocated internally (probes, replays)
    /// and never appear in trace files.
    pub const INTERNAL_BASE: u64 = 1 << 63;

    pub fn is_internal(self) -> bool {
        self.0 >= Self::INTERNAL_BASE
    }
}

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Cache level kinds of the modeled hierarchy: private L1-I/L1-D per core and
/// a shared L2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    L1i,
    L1d,
    L2,
}

impl LevelKind {
    pub const ALL: [LevelKind; 3] = [LevelKind::L1i, LevelKind::L1d, LevelKind::L2];

    pub fn bit(self) -> u8 {
        match self {
            LevelKind::L1i => 0b001,
            LevelKind::L1d => 0b010,
            LevelKind::L2 => 0b100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelKind::L1i => "l1i",
            LevelKind::L1d => "l1d",
            LevelKind::L2 => "l2",
        }
    }

    pub fn is_l1(self) -> bool {
        !matches!(self, LevelKind::L2)
    }
}

impl fmt::Display for LevelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LevelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1i" => Ok(LevelKind::L1i),
            "l1d" => Ok(LevelKind::L1d),
            "l2" => Ok(LevelKind::L2),
            other => Err(format!("unknown cache level `{other}`")),
        }
    }
}

/// One bit per cache level an access reached (the hit mask carried by
/// load/store and fetch-queue entries).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct LevelMask(pub u8);

impl LevelMask {
    pub const EMPTY: LevelMask = LevelMask(0);

    pub fn with(self, level: LevelKind) -> Self {
        LevelMask(self.0 | level.bit())
    }

    pub fn contains(self, level: LevelKind) -> bool {
        self.0 & level.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Levels in delivery order: L1 levels first, then L2.
    pub fn levels(self) -> impl Iterator<Item = LevelKind> {
        LevelKind::ALL
            .into_iter()
            .filter(move |l| self.contains(*l))
    }
}

impl FromIterator<LevelKind> for LevelMask {
    fn from_iter<I: IntoIterator<Item = LevelKind>>(iter: I) -> Self {
        iter.into_iter().fold(LevelMask::EMPTY, LevelMask::with)
    }
}

/// Kind of memory operation carried by a window record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Load,
    Store,
    Ifetch,
}

impl AccessKind {
    pub fn is_data(self) -> bool {
        !matches!(self, AccessKind::Ifetch)
    }

    /// The first-level cache this kind of access goes through.
    pub fn l1(self) -> LevelKind {
        match self {
            AccessKind::Ifetch => LevelKind::L1i,
            _ => LevelKind::L1d,
        }
    }
}
