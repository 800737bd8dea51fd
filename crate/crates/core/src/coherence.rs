//! Directory-based MESI over the private L1 data caches.
//!
//! With speculative-transition delay enabled, an in-flight access that would
//! downgrade or invalidate another core's copy is held back until its window
//! commits, and in-flight accesses that need no remote action are registered
//! with the directory only at commit. A squashed window therefore never
//! changes what the directory records for any core.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::MesiState;
use crate::types::{LineAddr, WindowId};

pub type CoreId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DirectoryEntry {
    /// Bit `c` set when core `c` holds a registered copy.
    pub sharers: u64,
    pub state: MesiState,
}

impl DirectoryEntry {
    fn holds(&self, core: CoreId) -> bool {
        self.sharers & (1 << core) != 0
    }

    fn remote(&self, core: CoreId) -> u64 {
        self.sharers & !(1 << core)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RemoteEffect {
    Downgrade { core: CoreId, line: LineAddr },
    Invalidate { core: CoreId, line: LineAddr },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DelayKind {
    DowngradeE2S,
    InvalidateRemote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DelayedTransition {
    pub window: WindowId,
    pub line: LineAddr,
    pub kind: DelayKind,
    pub core: CoreId,
    pub token: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoherenceDecision {
    Proceed {
        /// Requester's state after the access.
        state: MesiState,
        effects: Vec<RemoteEffect>,
        /// False when the directory update waits for the window's commit.
        registered: bool,
    },
    Delayed,
}

/// Window context of an in-flight access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Speculative {
    pub window: WindowId,
    pub token: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CoherenceStats {
    pub operations: u64,
    pub delayed: u64,
    pub released: u64,
    pub discarded: u64,
    pub downgrades: u64,
    pub invalidations: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Directory {
    entries: BTreeMap<LineAddr, DirectoryEntry>,
    delay: bool,
    pending: Vec<DelayedTransition>,
    pub stats: CoherenceStats,
}

impl Directory {
    pub fn new(delay: bool) -> Self {
        Directory {
            delay,
            ..Default::default()
        }
    }

    pub fn delay_enabled(&self) -> bool {
        self.delay
    }

    pub fn entry(&self, line: LineAddr) -> Option<DirectoryEntry> {
        self.entries.get(&line).copied()
    }

    pub fn entries(&self) -> &BTreeMap<LineAddr, DirectoryEntry> {
        &self.entries
    }

    pub fn pending(&self) -> &[DelayedTransition] {
        &self.pending
    }

    /// State of `core`'s registered copy, `I` if it holds none.
    pub fn state_of(&self, line: LineAddr, core: CoreId) -> MesiState {
        match self.entries.get(&line) {
            Some(e) if e.holds(core) => e.state,
            _ => MesiState::I,
        }
    }

    fn defer(
        &mut self,
        spec: Speculative,
        line: LineAddr,
        kind: DelayKind,
        core: CoreId,
    ) -> CoherenceDecision {
        self.stats.delayed += 1;
        self.pending.push(DelayedTransition {
            window: spec.window,
            line,
            kind,
            core,
            token: spec.token,
        });
        CoherenceDecision::Delayed
    }

    pub fn coherent_load(
        &mut self,
        line: LineAddr,
        core: CoreId,
        spec: Option<Speculative>,
    ) -> CoherenceDecision {
        self.stats.operations += 1;
        let entry = self.entries.get(&line).copied();
        let remote_owner = entry
            .filter(|e| matches!(e.state, MesiState::E | MesiState::M) && e.remote(core) != 0)
            .map(|e| e.remote(core).trailing_zeros() as CoreId);

        if let (Some(spec), Some(_), true) = (spec, remote_owner, self.delay) {
            return self.defer(spec, line, DelayKind::DowngradeE2S, core);
        }

        let state = match (entry, remote_owner) {
            (None, _) => MesiState::E,
            (Some(e), None) if e.holds(core) => e.state,
            (Some(_), None) => MesiState::S,
            (Some(_), Some(_)) => MesiState::S,
        };
        if spec.is_some() && self.delay {
            return CoherenceDecision::Proceed {
                state,
                effects: Vec::new(),
                registered: false,
            };
        }

        let mut effects = Vec::new();
        let e = self.entries.entry(line).or_insert(DirectoryEntry {
            sharers: 0,
            state: MesiState::E,
        });
        if let Some(owner) = remote_owner {
            effects.push(RemoteEffect::Downgrade { core: owner, line });
            self.stats.downgrades += 1;
        }
        e.sharers |= 1 << core;
        e.state = state;
        CoherenceDecision::Proceed {
            state,
            effects,
            registered: true,
        }
    }

    pub fn coherent_store(
        &mut self,
        line: LineAddr,
        core: CoreId,
        spec: Option<Speculative>,
    ) -> CoherenceDecision {
        self.stats.operations += 1;
        let remote = self.entries.get(&line).map_or(0, |e| e.remote(core));

        if let (Some(spec), true) = (spec, remote != 0 && self.delay) {
            return self.defer(spec, line, DelayKind::InvalidateRemote, core);
        }
        if spec.is_some() && self.delay {
            return CoherenceDecision::Proceed {
                state: MesiState::M,
                effects: Vec::new(),
                registered: false,
            };
        }

        let effects: Vec<RemoteEffect> = (0..64)
            .filter(|c| remote & (1 << c) != 0)
            .map(|c| RemoteEffect::Invalidate { core: c, line })
            .collect();
        self.stats.invalidations += effects.len() as u64;
        self.entries.insert(
            line,
            DirectoryEntry {
                sharers: 1 << core,
                state: MesiState::M,
            },
        );
        CoherenceDecision::Proceed {
            state: MesiState::M,
            effects,
            registered: true,
        }
    }

    /// Retires the delayed transitions of a closed window. On commit the
    /// caller replays them as committed accesses, in the returned order.
    pub fn release_delayed(&mut self, window: WindowId, committed: bool) -> Vec<DelayedTransition> {
        let (mine, rest): (Vec<_>, Vec<_>) =
            self.pending.drain(..).partition(|d| d.window == window);
        self.pending = rest;
        if committed {
            self.stats.released += mine.len() as u64;
        } else {
            self.stats.discarded += mine.len() as u64;
        }
        mine
    }

    /// `core` no longer holds `line` (eviction or invalidation).
    pub fn remove_sharer(&mut self, line: LineAddr, core: CoreId) {
        if let Some(e) = self.entries.get_mut(&line) {
            e.sharers &= !(1 << core);
            if e.sharers == 0 {
                self.entries.remove(&line);
            }
        }
    }

    pub fn remove_line(&mut self, line: LineAddr) {
        self.entries.remove(&line);
    }

    /// Single writer or multiple readers, per line.
    pub fn check_swmr(&self) -> Result<(), String> {
        for (line, e) in &self.entries {
            let n = e.sharers.count_ones();
            let ok = match e.state {
                MesiState::M | MesiState::E => n == 1,
                MesiState::S => n >= 1,
                MesiState::I => false,
            };
            if !ok {
                return Err(format!("line {line}: state {:?} with {n} sharers", e.state));
            }
        }
        Ok(())
    }

    pub fn delayed_fraction(&self) -> f64 {
        if self.stats.operations == 0 {
            0.0
        } else {
            self.stats.delayed as f64 / self.stats.operations as f64
        }
    }
}
