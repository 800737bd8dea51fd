//! Per-level temporary/persistent access control.
//!
//! In-flight accesses only ever fill the temporary domain and never update
//! replacement state on a hit. Commit notifications move lines into the
//! persistent domain while swapping one persistent way back to temporary, so
//! the per-set way budget never changes. Squash notifications drop lines that
//! are still temporary.

use serde::Serialize;

use crate::cache::{CacheGeometry, CacheSetState, Domain};
use crate::error::{Result, SimError};
use crate::notifier::WindowStatus;
use crate::report::LevelStats;
use crate::tos::{self, OwnerMask, SuspendedInstall, TosAccess, VictimChoice};
use crate::types::{LineAddr, ThreadId, WindowId};

/// Way budget and latency of one cache level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DomainConfig {
    /// Ways per set reserved for the temporary domain. Zero disables
    /// partitioning: every access is treated as non-speculative.
    pub cap_t: usize,
    pub hit_cycles: u64,
}

impl DomainConfig {
    pub fn baseline_mode(&self) -> bool {
        self.cap_t == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AccessResult {
    HitTemporary,
    HitPersistent,
    /// Temporary line resident but not owned; charged as a miss.
    EmulatedMiss,
    MissInstalled,
    /// Miss serviced without a fill because every temporary way is held by
    /// other threads.
    MissBypassed,
}

impl AccessResult {
    pub fn is_hit(self) -> bool {
        matches!(
            self,
            AccessResult::HitTemporary | AccessResult::HitPersistent
        )
    }
}

/// Latency of the two ways an access at one level can resolve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathLatency {
    pub hit: u64,
    pub miss: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AccessOutcome {
    pub result: AccessResult,
    pub latency: u64,
    pub evicted: Option<LineAddr>,
}

/// Side-effect-free view of what an access would find.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Miss,
    Hit { domain: Domain, visible: bool },
}

impl Probe {
    /// Hit that the probing thread may observe as a hit.
    pub fn visible_hit(self) -> bool {
        matches!(self, Probe::Hit { visible: true, .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SquashOutcome {
    Invalidated(LineAddr),
    Released,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitOutcome {
    Promoted { evicted: Option<LineAddr> },
    AlreadyPersistent,
    Reinstalled { evicted: Option<LineAddr> },
    Ignored,
}

impl CommitOutcome {
    pub fn evicted(self) -> Option<LineAddr> {
        match self {
            CommitOutcome::Promoted { evicted } | CommitOutcome::Reinstalled { evicted } => evicted,
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryEffect {
    InstalledTemporary {
        entry: SuspendedInstall,
        evicted: Option<LineAddr>,
    },
    Dropped(SuspendedInstall),
}

/// One cache instance with domain-partitioned sets.
#[derive(Clone, Debug)]
pub struct DomainCache {
    pub geometry: CacheGeometry,
    config: DomainConfig,
    tos: bool,
    sets: Vec<CacheSetState>,
    suspended: Vec<SuspendedInstall>,
    pub stats: LevelStats,
}

impl DomainCache {
    pub fn new(geometry: CacheGeometry, config: DomainConfig, tos: bool) -> Result<Self> {
        check_cap(&geometry, config.cap_t)?;
        Ok(DomainCache {
            sets: (0..geometry.num_sets)
                .map(|_| CacheSetState::new(geometry.ways, config.cap_t))
                .collect(),
            geometry,
            config,
            tos,
            suspended: Vec::new(),
            stats: LevelStats::default(),
        })
    }

    pub fn config(&self) -> DomainConfig {
        self.config
    }

    pub fn baseline_mode(&self) -> bool {
        self.config.baseline_mode()
    }

    /// Ownership semaphores only act when the level is partitioned.
    pub fn tos_enabled(&self) -> bool {
        self.tos && !self.baseline_mode()
    }

    pub fn set(&self, index: usize) -> &CacheSetState {
        &self.sets[index]
    }

    pub fn set_mut(&mut self, index: usize) -> &mut CacheSetState {
        &mut self.sets[index]
    }

    pub fn sets(&self) -> &[CacheSetState] {
        &self.sets
    }

    pub fn suspended(&self) -> &[SuspendedInstall] {
        &self.suspended
    }

    fn locate(&self, line: LineAddr) -> (usize, u64) {
        (self.geometry.set_index(line), self.geometry.tag(line))
    }

    pub fn lookup(&self, line: LineAddr) -> Option<(usize, Domain)> {
        let (set, tag) = self.locate(line);
        self.sets[set].lookup(tag)
    }

    pub fn contains(&self, line: LineAddr) -> bool {
        self.lookup(line).is_some()
    }

    pub fn probe(&self, line: LineAddr, thread: ThreadId) -> Probe {
        let (set, tag) = self.locate(line);
        match self.sets[set].lookup(tag) {
            None => Probe::Miss,
            Some((way, domain)) => {
                let visible = domain == Domain::Persistent
                    || !self.tos_enabled()
                    || self.sets[set].ways[way].owners.contains(thread);
                Probe::Hit { domain, visible }
            }
        }
    }

    /// In-flight access by `thread` inside `window`.
    pub fn access_inflight(
        &mut self,
        line: LineAddr,
        thread: ThreadId,
        window: WindowId,
        latency: PathLatency,
    ) -> AccessOutcome {
        self.stats.accesses += 1;
        if self.baseline_mode() {
            return self.access_plain(line, latency);
        }
        let (set_idx, tag) = self.locate(line);
        let tos = self.tos_enabled();
        let set = &mut self.sets[set_idx];
        if let Some((way, domain)) = set.lookup(tag) {
            let result = match domain {
                Domain::Persistent => AccessResult::HitPersistent,
                Domain::Temporary if !tos => {
                    set.ways[way].owners.insert(thread);
                    AccessResult::HitTemporary
                }
                Domain::Temporary => match tos::check_and_acquire(set, way, thread) {
                    TosAccess::OwnedHit => AccessResult::HitTemporary,
                    TosAccess::AcquiredWithEmulatedMiss => AccessResult::EmulatedMiss,
                },
            };
            return self.finish(result, latency, None);
        }

        match tos::choose_temporary_victim(set, thread, tos) {
            VictimChoice::Way(way) => {
                let evicted = set
                    .invalidate(way)
                    .map(|t| self.geometry.line_of(set_idx, t));
                set.install(way, tag, Domain::Temporary, OwnerMask::of(thread));
                self.finish(AccessResult::MissInstalled, latency, evicted)
            }
            VictimChoice::Suspended => {
                self.suspended.push(SuspendedInstall {
                    requester: thread,
                    window,
                    line,
                    set: set_idx,
                });
                self.stats.suspended += 1;
                self.finish(AccessResult::MissBypassed, latency, None)
            }
        }
    }

    /// Unpartitioned LRU access: hits refresh recency, misses fill persistent.
    fn access_plain(&mut self, line: LineAddr, latency: PathLatency) -> AccessOutcome {
        let (set_idx, tag) = self.locate(line);
        let set = &mut self.sets[set_idx];
        if let Some((way, _)) = set.lookup(tag) {
            set.touch(way).expect("hit way is valid");
            return self.finish(AccessResult::HitPersistent, latency, None);
        }
        let way = set
            .select_victim(Domain::Persistent)
            .expect("persistent ways exist");
        let evicted = set
            .invalidate(way)
            .map(|t| self.geometry.line_of(set_idx, t));
        set.install(way, tag, Domain::Persistent, OwnerMask::EMPTY);
        self.finish(AccessResult::MissInstalled, latency, evicted)
    }

    fn finish(
        &mut self,
        result: AccessResult,
        latency: PathLatency,
        evicted: Option<LineAddr>,
    ) -> AccessOutcome {
        let s = &mut self.stats;
        match result {
            AccessResult::HitTemporary => s.hits_temporary += 1,
            AccessResult::HitPersistent => s.hits_persistent += 1,
            AccessResult::EmulatedMiss => s.emulated_misses += 1,
            AccessResult::MissInstalled => s.misses += 1,
            AccessResult::MissBypassed => s.bypasses += 1,
        }
        if evicted.is_some() {
            s.evictions += 1;
        }
        let latency = if result.is_hit() {
            latency.hit
        } else {
            latency.miss
        };
        AccessOutcome {
            result,
            latency,
            evicted,
        }
    }

    pub fn apply_squash(&mut self, line: LineAddr, thread: ThreadId) -> SquashOutcome {
        if self.baseline_mode() {
            return SquashOutcome::Ignored;
        }
        let (set_idx, tag) = self.locate(line);
        let tos = self.tos_enabled();
        let set = &mut self.sets[set_idx];
        match set.lookup(tag) {
            Some((way, Domain::Temporary)) => {
                if !tos || set.ways[way].owners.only(thread) {
                    set.invalidate(way);
                    self.stats.squash_invalidations += 1;
                    SquashOutcome::Invalidated(line)
                } else {
                    set.ways[way].owners.remove(thread);
                    self.stats.squash_releases += 1;
                    SquashOutcome::Released
                }
            }
            _ => SquashOutcome::Ignored,
        }
    }

    pub fn apply_commit(&mut self, line: LineAddr) -> CommitOutcome {
        if self.baseline_mode() {
            return CommitOutcome::Ignored;
        }
        let (set_idx, tag) = self.locate(line);
        let set = &mut self.sets[set_idx];
        match set.lookup(tag) {
            Some((way, Domain::Temporary)) => {
                tos::promote_on_commit(set, way);
                let victim = set
                    .select_victim(Domain::Persistent)
                    .expect("persistent ways exist");
                let evicted = set
                    .invalidate(victim)
                    .map(|t| self.geometry.line_of(set_idx, t));
                set.relabel(victim, Domain::Temporary);
                set.relabel(way, Domain::Persistent);
                set.touch(way).expect("committed way is valid");
                self.stats.promotions += 1;
                if evicted.is_some() {
                    self.stats.evictions += 1;
                }
                CommitOutcome::Promoted { evicted }
            }
            Some((way, Domain::Persistent)) => {
                set.touch(way).expect("hit way is valid");
                CommitOutcome::AlreadyPersistent
            }
            None => {
                let evicted = Self::fill_persistent(set, &self.geometry, set_idx, tag);
                self.stats.reinstalls += 1;
                if evicted.is_some() {
                    self.stats.evictions += 1;
                }
                CommitOutcome::Reinstalled { evicted }
            }
        }
    }

    fn fill_persistent(
        set: &mut CacheSetState,
        geometry: &CacheGeometry,
        set_idx: usize,
        tag: u64,
    ) -> Option<LineAddr> {
        let victim = set
            .select_victim(Domain::Persistent)
            .expect("persistent ways exist");
        let evicted = set.invalidate(victim).map(|t| geometry.line_of(set_idx, t));
        set.install(victim, tag, Domain::Persistent, OwnerMask::EMPTY);
        evicted
    }

    /// Fill straight into the persistent domain (prefetches, committed
    /// installs). Returns `None` if the line is already resident.
    pub fn install_persistent(&mut self, line: LineAddr) -> Option<Option<LineAddr>> {
        let (set_idx, tag) = self.locate(line);
        let set = &mut self.sets[set_idx];
        match set.lookup(tag) {
            Some((_, Domain::Persistent)) => return None,
            Some((way, Domain::Temporary)) => {
                set.invalidate(way);
            }
            None => {}
        }
        let evicted = Self::fill_persistent(set, &self.geometry, set_idx, tag);
        if evicted.is_some() {
            self.stats.evictions += 1;
        }
        Some(evicted)
    }

    /// Removes `line` from whichever domain holds it.
    pub fn invalidate_line(&mut self, line: LineAddr) -> bool {
        let (set_idx, tag) = self.locate(line);
        let set = &mut self.sets[set_idx];
        match set.lookup(tag) {
            Some((way, _)) => {
                set.invalidate(way);
                true
            }
            None => false,
        }
    }

    /// Changes the temporary budget of every set. Lines in ways that change
    /// label are dropped and returned.
    pub fn reconfigure(&mut self, new_cap: usize) -> Result<Vec<LineAddr>> {
        check_cap(&self.geometry, new_cap)?;
        let mut dropped = Vec::new();
        for (set_idx, set) in self.sets.iter_mut().enumerate() {
            let current = set.temp_count();
            let (from, to, count) = if new_cap < current {
                (Domain::Temporary, Domain::Persistent, current - new_cap)
            } else {
                (Domain::Persistent, Domain::Temporary, new_cap - current)
            };
            for _ in 0..count {
                let way = set.select_victim(from).expect("domain has enough ways");
                if let Some(tag) = set.invalidate(way) {
                    dropped.push(self.geometry.line_of(set_idx, tag));
                }
                set.relabel(way, to);
            }
        }
        self.config.cap_t = new_cap;
        if new_cap == 0 {
            self.suspended.clear();
        }
        Ok(dropped)
    }

    /// Re-attempts suspended installs of open windows and drops the rest.
    /// `status` reports each window's state;
    /// `allow` can veto a temporary install this round.
    pub fn retry_suspended(
        &mut self,
        status: impl Fn(WindowId) -> WindowStatus,
        mut allow: impl FnMut(&SuspendedInstall) -> bool,
    ) -> Vec<RetryEffect> {
        let pending = std::mem::take(&mut self.suspended);
        let mut effects = Vec::new();
        for entry in pending {
            match status(entry.window) {
                // A committed window's masked levels were already re-installed
                // by its commit notifications.
                WindowStatus::Squashed | WindowStatus::Committed => {
                    effects.push(RetryEffect::Dropped(entry))
                }
                WindowStatus::Open => {
                    if self.contains(entry.line) {
                        effects.push(RetryEffect::Dropped(entry));
                        continue;
                    }
                    if !allow(&entry) {
                        self.suspended.push(entry);
                        continue;
                    }
                    let tag = self.geometry.tag(entry.line);
                    let set = &mut self.sets[entry.set];
                    match tos::choose_temporary_victim(
                        set,
                        entry.requester,
                        self.tos && self.config.cap_t > 0,
                    ) {
                        VictimChoice::Way(way) => {
                            let evicted = set
                                .invalidate(way)
                                .map(|t| self.geometry.line_of(entry.set, t));
                            set.install(
                                way,
                                tag,
                                Domain::Temporary,
                                OwnerMask::of(entry.requester),
                            );
                            if evicted.is_some() {
                                self.stats.evictions += 1;
                            }
                            effects.push(RetryEffect::InstalledTemporary { entry, evicted });
                        }
                        VictimChoice::Suspended => self.suspended.push(entry),
                    }
                }
            }
        }
        effects
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, set) in self.sets.iter().enumerate() {
            set.check_invariants(self.config.cap_t)
                .map_err(|e| format!("{} set {i}: {e}", self.geometry.level))?;
        }
        Ok(())
    }
}

fn check_cap(geometry: &CacheGeometry, cap: usize) -> Result<()> {
    if cap >= geometry.ways {
        return Err(SimError::CapacityOutOfRange {
            level: geometry.level,
            cap,
            ways: geometry.ways,
        });
    }
    Ok(())
}
