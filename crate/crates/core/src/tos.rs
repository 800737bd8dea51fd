//! Thread ownership semaphores for temporary-domain lines.
//!
//! Each temporary line carries one ownership bit per hardware thread. A thread
//! that touches a temporary line it does not own pays a full miss latency and
//! gains ownership; a thread that wants to replace a line owned by others only
//! drops its own bit. Persistent lines never carry ownership.

use serde::Serialize;

use crate::cache::{CacheSetState, Domain};
use crate::types::{LineAddr, ThreadId, WindowId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct OwnerMask(pub u64);

impl OwnerMask {
    pub const EMPTY: OwnerMask = OwnerMask(0);

    pub fn single(thread: u32) -> Self {
        OwnerMask(1 << thread)
    }

    pub fn of(thread: ThreadId) -> Self {
        Self::single(thread.0)
    }

    pub fn contains(self, thread: ThreadId) -> bool {
        self.0 & (1 << thread.0) != 0
    }

    pub fn insert(&mut self, thread: ThreadId) {
        self.0 |= 1 << thread.0;
    }

    pub fn remove(&mut self, thread: ThreadId) {
        self.0 &= !(1 << thread.0);
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// True when nobody but `thread` holds the line.
    pub fn only(self, thread: ThreadId) -> bool {
        self.0 & !(1 << thread.0) == 0
    }

    pub fn threads(self) -> impl Iterator<Item = ThreadId> {
        (0..64u32)
            .filter(move |i| self.0 & (1 << i) != 0)
            .map(ThreadId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TosAccess {
    OwnedHit,
    AcquiredWithEmulatedMiss,
}

/// Temporary-line hit by `thread`. Non-owners gain ownership and must be
/// charged the level's full miss latency by the caller.
pub fn check_and_acquire(set: &mut CacheSetState, way: usize, thread: ThreadId) -> TosAccess {
    let line = &mut set.ways[way];
    debug_assert!(line.valid && line.domain == Domain::Temporary);
    if line.owners.contains(thread) {
        TosAccess::OwnedHit
    } else {
        line.owners.insert(thread);
        TosAccess::AcquiredWithEmulatedMiss
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReleaseOutcome {
    /// Nobody else owns the victim; replacement proceeds.
    Evicted,
    /// Victim still owned by others, but another temporary way is free to take.
    ReleasedOnly,
    /// Every temporary way is held by another thread; the install must wait.
    Suspended,
}

fn evictable(set: &CacheSetState, way: usize, thread: ThreadId) -> bool {
    let w = &set.ways[way];
    w.domain == Domain::Temporary && (!w.valid || w.owners.only(thread))
}

/// Drops `thread`'s claim on `victim` as part of a temporary-domain replacement.
pub fn release_on_evict(
    set: &mut CacheSetState,
    victim: usize,
    thread: ThreadId,
) -> ReleaseOutcome {
    set.ways[victim].owners.remove(thread);
    if set.ways[victim].owners.is_empty() {
        return ReleaseOutcome::Evicted;
    }
    let alternative = (0..set.ways.len()).any(|w| w != victim && evictable(set, w, thread));
    if alternative {
        ReleaseOutcome::ReleasedOnly
    } else {
        ReleaseOutcome::Suspended
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VictimChoice {
    Way(usize),
    Suspended,
}

/// Picks the temporary way an in-flight install by `thread` may fill.
///
/// Without ownership tracking this is plain within-domain LRU. With it, the
/// LRU victim is offered to [`release_on_evict`]; if others still hold it the
/// least recent way that `thread` alone owns is used instead.
pub fn choose_temporary_victim(
    set: &mut CacheSetState,
    thread: ThreadId,
    tos: bool,
) -> VictimChoice {
    if let Some(free) = set.first_invalid(Domain::Temporary) {
        return VictimChoice::Way(free);
    }
    let order = set.lru_order(Domain::Temporary);
    let Some(&lru) = order.first() else {
        return VictimChoice::Suspended;
    };
    if !tos {
        return VictimChoice::Way(lru);
    }
    match release_on_evict(set, lru, thread) {
        ReleaseOutcome::Evicted => VictimChoice::Way(lru),
        ReleaseOutcome::ReleasedOnly => order
            .iter()
            .copied()
            .find(|&w| w != lru && evictable(set, w, thread))
            .map_or(VictimChoice::Suspended, VictimChoice::Way),
        ReleaseOutcome::Suspended => VictimChoice::Suspended,
    }
}

/// Clears ownership before a committed temporary line is relabeled persistent.
pub fn promote_on_commit(set: &mut CacheSetState, way: usize) {
    set.ways[way].owners = OwnerMask::EMPTY;
}

/// An in-flight install that found every temporary way held by other threads.
/// The requester was serviced without a fill.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SuspendedInstall {
    pub requester: ThreadId,
    pub window: WindowId,
    pub line: LineAddr,
    pub set: usize,
}
