//! Set-associative cache geometry and per-set metadata.
//!
//! Every way carries a domain label (temporary or persistent) whether or not
//! it holds a valid line. Replacement is LRU within a domain; temporary lines
//! are never touched after install, so their recency is install order.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::tos::OwnerMask;
use crate::types::{LevelKind, LineAddr, LINE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Domain {
    Temporary,
    Persistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MesiState {
    M,
    E,
    S,
    I,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CacheGeometry {
    pub level: LevelKind,
    pub num_sets: usize,
    pub ways: usize,
    pub line_size: u64,
    pub shared: bool,
}

impl CacheGeometry {
    pub fn new(level: LevelKind, num_sets: usize, ways: usize, shared: bool) -> Result<Self> {
        if num_sets == 0 || !num_sets.is_power_of_two() {
            return Err(SimError::Config(format!(
                "{level}: set count {num_sets} is not a power of two"
            )));
        }
        if ways < 2 {
            return Err(SimError::Config(format!(
                "{level}: need at least 2 ways, got {ways}"
            )));
        }
        Ok(CacheGeometry {
            level,
            num_sets,
            ways,
            line_size: LINE_SIZE,
            shared,
        })
    }

    pub fn set_index(&self, line: LineAddr) -> usize {
        (line.0 % self.num_sets as u64) as usize
    }

    pub fn tag(&self, line: LineAddr) -> u64 {
        line.0 / self.num_sets as u64
    }

    pub fn line_of(&self, set: usize, tag: u64) -> LineAddr {
        LineAddr(tag * self.num_sets as u64 + set as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CacheLineMeta {
    pub tag: u64,
    pub valid: bool,
    pub domain: Domain,
    pub owners: OwnerMask,
    pub coh: MesiState,
    /// Monotonic recency stamp; larger is more recent within the set.
    pub stamp: u64,
}

impl CacheLineMeta {
    fn empty(domain: Domain) -> Self {
        CacheLineMeta {
            tag: 0,
            valid: false,
            domain,
            owners: OwnerMask::EMPTY,
            coh: MesiState::I,
            stamp: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CacheSetState {
    pub ways: Vec<CacheLineMeta>,
    clock: u64,
}

impl CacheSetState {
    /// All ways invalid; the last `cap_t` ways are labeled temporary.
    pub fn new(ways: usize, cap_t: usize) -> Self {
        let ways = (0..ways)
            .map(|w| {
                let domain = if w + cap_t >= ways {
                    Domain::Temporary
                } else {
                    Domain::Persistent
                };
                CacheLineMeta::empty(domain)
            })
            .collect();
        CacheSetState { ways, clock: 0 }
    }

    pub fn temp_count(&self) -> usize {
        self.count(Domain::Temporary)
    }

    pub fn pers_count(&self) -> usize {
        self.count(Domain::Persistent)
    }

    fn count(&self, domain: Domain) -> usize {
        self.ways.iter().filter(|w| w.domain == domain).count()
    }

    pub fn lookup(&self, tag: u64) -> Option<(usize, Domain)> {
        self.ways
            .iter()
            .position(|w| w.valid && w.tag == tag)
            .map(|i| (i, self.ways[i].domain))
    }

    /// Valid ways of `domain`, least recent first.
    pub fn lru_order(&self, domain: Domain) -> Vec<usize> {
        let mut ways: Vec<usize> = (0..self.ways.len())
            .filter(|&i| self.ways[i].valid && self.ways[i].domain == domain)
            .collect();
        ways.sort_by_key(|&i| (self.ways[i].stamp, i));
        ways
    }

    pub fn first_invalid(&self, domain: Domain) -> Option<usize> {
        self.ways
            .iter()
            .position(|w| !w.valid && w.domain == domain)
    }

    pub fn select_victim(&self, domain: Domain) -> Result<usize> {
        if !self.ways.iter().any(|w| w.domain == domain) {
            return Err(SimError::DomainEmpty);
        }
        if let Some(free) = self.first_invalid(domain) {
            return Ok(free);
        }
        Ok(self.lru_order(domain)[0])
    }

    pub fn touch(&mut self, way: usize) -> Result<()> {
        let line = self.ways.get(way).ok_or(SimError::InvalidWay(way))?;
        if !line.valid {
            return Err(SimError::InvalidWay(way));
        }
        let domain = line.domain;
        let newest = self
            .ways
            .iter()
            .filter(|w| w.valid && w.domain == domain)
            .map(|w| w.stamp)
            .max()
            .unwrap_or(0);
        if line.stamp == newest {
            return Ok(());
        }
        self.clock += 1;
        self.ways[way].stamp = self.clock;
        Ok(())
    }

    /// Fills `way` with a fresh line that becomes the most recent of its domain.
    pub fn install(&mut self, way: usize, tag: u64, domain: Domain, owners: OwnerMask) {
        self.clock += 1;
        self.ways[way] = CacheLineMeta {
            tag,
            valid: true,
            domain,
            owners,
            coh: MesiState::E,
            stamp: self.clock,
        };
    }

    /// Drops the line in `way`; the way keeps its domain label.
    pub fn invalidate(&mut self, way: usize) -> Option<u64> {
        let w = &mut self.ways[way];
        let was = w.valid.then_some(w.tag);
        *w = CacheLineMeta::empty(w.domain);
        was
    }

    pub fn relabel(&mut self, way: usize, domain: Domain) {
        self.ways[way].domain = domain;
    }

    /// Position of `way` in its domain's recency order (0 = most recent).
    pub fn recency_rank(&self, way: usize) -> Option<usize> {
        let w = self.ways.get(way)?;
        if !w.valid {
            return None;
        }
        let order = self.lru_order(w.domain);
        order.iter().rev().position(|&i| i == way)
    }

    /// Rank of every way, for snapshot comparisons that ignore raw stamps.
    pub fn ranks(&self) -> Vec<Option<usize>> {
        (0..self.ways.len()).map(|w| self.recency_rank(w)).collect()
    }

    pub fn check_invariants(&self, cap_t: usize) -> std::result::Result<(), String> {
        if self.temp_count() != cap_t {
            return Err(format!(
                "temporary ways {} != configured {cap_t}",
                self.temp_count()
            ));
        }
        for (i, w) in self.ways.iter().enumerate() {
            if !w.owners.is_empty() && !(w.valid && w.domain == Domain::Temporary) {
                return Err(format!(
                    "way {i}: owner mask set on a non-temporary or invalid way"
                ));
            }
            if w.coh == MesiState::I && w.valid {
                return Err(format!("way {i}: valid line in state I"));
            }
            if !w.valid && w.coh != MesiState::I {
                return Err(format!("way {i}: invalid line not in state I"));
            }
            if w.valid && self.ways[i + 1..].iter().any(|o| o.valid && o.tag == w.tag) {
                return Err(format!("duplicate tag {:#x}", w.tag));
            }
        }
        Ok(())
    }
}
