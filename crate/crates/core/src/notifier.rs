//! Commit-stage notifier and the notification fill buffer (NFB).
//!
//! Every access performed inside a speculation window is recorded together
//! with the mask of cache levels it reached. When the window resolves, one
//! request per (line, masked level) is offered to the NFB, which merges
//! duplicates from the same window and forwards the rest to the caches.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::types::{AccessKind, LevelKind, LevelMask, LineAddr, ThreadId, WindowId};

pub const NFB_ENTRIES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WindowStatus {
    Open,
    Committed,
    Squashed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum NotifyKind {
    Commit,
    Squash,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RecordEntry {
    Access {
        line: LineAddr,
        mask: LevelMask,
        kind: AccessKind,
    },
    /// Placeholder for an operation whose execution waits for the verdict.
    Deferred(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WindowRecord {
    pub window: WindowId,
    pub thread: ThreadId,
    pub entries: Vec<RecordEntry>,
    pub status: WindowStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NotificationRequest {
    pub kind: NotifyKind,
    pub line: LineAddr,
    pub level: LevelKind,
    pub thread: ThreadId,
    pub window: WindowId,
}

impl NotificationRequest {
    fn key(&self) -> (WindowId, LineAddr, LevelKind, NotifyKind) {
        (self.window, self.line, self.level, self.kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OfferResult {
    Merged,
    Enqueued,
    ForwardedImmediately,
}

/// Ordered output of a window verdict: cache notifications interleaved with
/// deferred operations at their program position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emission {
    Notify(NotificationRequest),
    Deferred(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NotifierStats {
    pub offered: u64,
    pub merged: u64,
    pub delivered: u64,
    pub max_occupancy: usize,
}

#[derive(Clone, Debug)]
pub struct Notifier {
    windows: BTreeMap<WindowId, WindowRecord>,
    nfb: VecDeque<NotificationRequest>,
    capacity: usize,
    suppressed: LevelMask,
    /// Keys already forwarded during the current verdict.
    forwarded: BTreeSet<(WindowId, LineAddr, LevelKind, NotifyKind)>,
    pub stats: NotifierStats,
}

impl Default for Notifier {
    fn default() -> Self {
        Self::new(NFB_ENTRIES)
    }
}

impl Notifier {
    pub fn new(capacity: usize) -> Self {
        Notifier {
            windows: BTreeMap::new(),
            nfb: VecDeque::new(),
            capacity,
            suppressed: LevelMask::EMPTY,
            forwarded: BTreeSet::new(),
            stats: NotifierStats::default(),
        }
    }

    /// Requests for levels in `levels` are never offered (unpartitioned levels).
    pub fn suppress(&mut self, levels: LevelMask) {
        self.suppressed = levels;
    }

    pub fn occupancy(&self) -> usize {
        self.nfb.len()
    }

    pub fn open(&mut self, window: WindowId, thread: ThreadId) -> Result<()> {
        if self.windows.contains_key(&window) {
            return Err(SimError::DuplicateWindow(window));
        }
        self.windows.insert(
            window,
            WindowRecord {
                window,
                thread,
                entries: Vec::new(),
                status: WindowStatus::Open,
            },
        );
        Ok(())
    }

    pub fn record(&self, window: WindowId) -> Option<&WindowRecord> {
        self.windows.get(&window)
    }

    pub fn status(&self, window: WindowId) -> Option<WindowStatus> {
        self.windows.get(&window).map(|w| w.status)
    }

    pub fn open_windows(&self) -> impl Iterator<Item = &WindowRecord> {
        self.windows
            .values()
            .filter(|w| w.status == WindowStatus::Open)
    }

    /// Fails unless `window` is open; returns its record.
    pub fn open_record(&mut self, window: WindowId) -> Result<&mut WindowRecord> {
        let rec = self
            .windows
            .get_mut(&window)
            .ok_or(SimError::UnknownWindow(window))?;
        if rec.status != WindowStatus::Open {
            return Err(SimError::WindowClosed(window));
        }
        Ok(rec)
    }

    pub fn record_access(
        &mut self,
        window: WindowId,
        line: LineAddr,
        mask: LevelMask,
        kind: AccessKind,
    ) -> Result<()> {
        self.open_record(window)?
            .entries
            .push(RecordEntry::Access { line, mask, kind });
        Ok(())
    }

    pub fn record_deferred(&mut self, window: WindowId, token: u64) -> Result<()> {
        self.open_record(window)?
            .entries
            .push(RecordEntry::Deferred(token));
        Ok(())
    }

    /// Closes `window` with `verdict` and returns everything the caches and
    /// the deferred-operation queue must process, in order.
    pub fn emit_notifications(
        &mut self,
        window: WindowId,
        verdict: NotifyKind,
    ) -> Result<Vec<Emission>> {
        let rec = self.open_record(window)?;
        rec.status = match verdict {
            NotifyKind::Commit => WindowStatus::Committed,
            NotifyKind::Squash => WindowStatus::Squashed,
        };
        let thread = rec.thread;
        let entries = std::mem::take(&mut rec.entries);
        let mut out = Vec::new();
        self.forwarded.clear();
        for entry in entries {
            match entry {
                RecordEntry::Access { line, mask, .. } => {
                    let suppressed = self.suppressed;
                    for level in mask.levels().filter(|l| !suppressed.contains(*l)) {
                        let req = NotificationRequest {
                            kind: verdict,
                            line,
                            level,
                            thread,
                            window,
                        };
                        let (_, forwarded) = self.nfb_offer(req);
                        out.extend(forwarded.into_iter().map(Emission::Notify));
                    }
                }
                RecordEntry::Deferred(token) => {
                    out.extend(self.drain().into_iter().map(Emission::Notify));
                    self.forwarded.clear();
                    out.push(Emission::Deferred(token));
                }
            }
        }
        out.extend(self.drain().into_iter().map(Emission::Notify));
        self.forwarded.clear();
        Ok(out)
    }

    /// Offers one request. Returns the outcome and any requests that had to
    /// leave the buffer to make room.
    pub fn nfb_offer(
        &mut self,
        req: NotificationRequest,
    ) -> (OfferResult, Vec<NotificationRequest>) {
        self.stats.offered += 1;
        if self.forwarded.contains(&req.key()) || self.nfb.iter().any(|p| p.key() == req.key()) {
            self.stats.merged += 1;
            return (OfferResult::Merged, Vec::new());
        }
        if self.capacity == 0 {
            self.stats.delivered += 1;
            return (OfferResult::ForwardedImmediately, vec![req]);
        }
        let mut forwarded = Vec::new();
        if self.nfb.len() == self.capacity {
            let oldest = self.nfb.pop_front().expect("buffer is full");
            self.forwarded.insert(oldest.key());
            self.stats.delivered += 1;
            forwarded.push(oldest);
        }
        self.nfb.push_back(req);
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.nfb.len());
        (OfferResult::Enqueued, forwarded)
    }

    /// Empties the buffer: first-level requests first, then the shared level,
    /// each group in arrival order.
    pub fn drain(&mut self) -> Vec<NotificationRequest> {
        let (mut first, rest): (Vec<_>, Vec<_>) = self.nfb.drain(..).partition(|r| r.level.is_l1());
        first.extend(rest);
        self.stats.delivered += first.len() as u64;
        first
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const T: ThreadId = ThreadId(0);
    const DL2: LevelMask = LevelMask(0b110);

    fn notifies(em: &[Emission]) -> Vec<NotificationRequest> {
        em.iter()
            .filter_map(|e| match e {
                Emission::Notify(r) => Some(*r),
                Emission::Deferred(_) => None,
            })
            .collect()
    }

    #[test]
    fn record_requires_open_window() {
        let mut n = Notifier::default();
        assert_eq!(
            n.record_access(WindowId(1), LineAddr(1), DL2, AccessKind::Load),
            Err(SimError::UnknownWindow(WindowId(1)))
        );
        n.open(WindowId(1), T).unwrap();
        n.record_access(WindowId(1), LineAddr(1), DL2, AccessKind::Load)
            .unwrap();
        assert_eq!(n.record(WindowId(1)).unwrap().entries.len(), 1);
        n.emit_notifications(WindowId(1), NotifyKind::Squash)
            .unwrap();
        assert_eq!(
            n.record_access(WindowId(1), LineAddr(1), DL2, AccessKind::Load),
            Err(SimError::WindowClosed(WindowId(1)))
        );
        assert_eq!(
            n.open(WindowId(1), T),
            Err(SimError::DuplicateWindow(WindowId(1)))
        );
    }

    #[test]
    fn empty_window_emits_nothing() {
        let mut n = Notifier::default();
        n.open(WindowId(3), T).unwrap();
        assert!(n
            .emit_notifications(WindowId(3), NotifyKind::Commit)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn commit_of_two_loads_notifies_each_masked_level() {
        let mut n = Notifier::default();
        n.open(WindowId(1), T).unwrap();
        n.record_access(WindowId(1), LineAddr(0xa), DL2, AccessKind::Load)
            .unwrap();
        n.record_access(
            WindowId(1),
            LineAddr(0xb),
            LevelMask(0b010),
            AccessKind::Load,
        )
        .unwrap();
        let reqs = notifies(
            &n.emit_notifications(WindowId(1), NotifyKind::Commit)
                .unwrap(),
        );
        let got: Vec<_> = reqs.iter().map(|r| (r.line.0, r.level)).collect();
        assert_eq!(
            got,
            vec![
                (0xa, LevelKind::L1d),
                (0xb, LevelKind::L1d),
                (0xa, LevelKind::L2)
            ]
        );
        assert!(reqs.iter().all(|r| r.kind == NotifyKind::Commit));
    }

    #[test]
    fn repeated_line_is_merged() {
        let mut n = Notifier::default();
        n.open(WindowId(1), T).unwrap();
        for _ in 0..3 {
            n.record_access(WindowId(1), LineAddr(9), DL2, AccessKind::Load)
                .unwrap();
        }
        let reqs = notifies(
            &n.emit_notifications(WindowId(1), NotifyKind::Commit)
                .unwrap(),
        );
        assert_eq!(reqs.len(), 2);
        assert_eq!(n.stats.merged, 4);
        assert_eq!(n.stats.delivered, n.stats.offered - n.stats.merged);
    }

    #[test]
    fn ifetch_uses_instruction_level() {
        let mut n = Notifier::default();
        n.open(WindowId(1), T).unwrap();
        n.record_access(
            WindowId(1),
            LineAddr(4),
            LevelMask(0b101),
            AccessKind::Ifetch,
        )
        .unwrap();
        let reqs = notifies(
            &n.emit_notifications(WindowId(1), NotifyKind::Squash)
                .unwrap(),
        );
        assert_eq!(
            reqs.iter().map(|r| r.level).collect::<Vec<_>>(),
            vec![LevelKind::L1i, LevelKind::L2]
        );
    }

    #[test]
    fn overflow_forwards_oldest() {
        let mut n = Notifier::default();
        let req = |l| NotificationRequest {
            kind: NotifyKind::Commit,
            line: LineAddr(l),
            level: LevelKind::L2,
            thread: T,
            window: WindowId(1),
        };
        for l in 0..16 {
            assert_eq!(n.nfb_offer(req(l)), (OfferResult::Enqueued, vec![]));
        }
        assert_eq!(n.nfb_offer(req(3)).0, OfferResult::Merged);
        let (res, fwd) = n.nfb_offer(req(16));
        assert_eq!(res, OfferResult::Enqueued);
        assert_eq!(fwd, vec![req(0)]);
        assert_eq!(n.occupancy(), 16);
    }

    #[test]
    fn requests_from_different_windows_are_not_merged() {
        let mut n = Notifier::default();
        let mk = |w| NotificationRequest {
            kind: NotifyKind::Commit,
            line: LineAddr(1),
            level: LevelKind::L2,
            thread: T,
            window: WindowId(w),
        };
        n.nfb_offer(mk(1));
        assert_eq!(n.nfb_offer(mk(2)).0, OfferResult::Enqueued);
    }

    #[test]
    fn deferred_marker_keeps_program_order() {
        let mut n = Notifier::default();
        n.open(WindowId(1), T).unwrap();
        n.record_access(WindowId(1), LineAddr(1), LevelMask(0b010), AccessKind::Load)
            .unwrap();
        n.record_deferred(WindowId(1), 77).unwrap();
        n.record_access(WindowId(1), LineAddr(2), LevelMask(0b010), AccessKind::Load)
            .unwrap();
        let em = n
            .emit_notifications(WindowId(1), NotifyKind::Commit)
            .unwrap();
        assert!(matches!(em[0], Emission::Notify(r) if r.line == LineAddr(1)));
        assert_eq!(em[1], Emission::Deferred(77));
        assert!(matches!(em[2], Emission::Notify(r) if r.line == LineAddr(2)));
    }

    #[test]
    fn suppressed_levels_are_skipped() {
        let mut n = Notifier::default();
        n.suppress(LevelMask(0b010));
        n.open(WindowId(1), T).unwrap();
        n.record_access(WindowId(1), LineAddr(1), DL2, AccessKind::Load)
            .unwrap();
        let reqs = notifies(
            &n.emit_notifications(WindowId(1), NotifyKind::Commit)
                .unwrap(),
        );
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].level, LevelKind::L2);
    }

    #[test]
    fn many_windows_dedup_oracle() {
        // Per window verdict, each (line, level) pair is delivered exactly once.
        let mut n = Notifier::default();
        for w in 1..=20u64 {
            n.open(WindowId(w), T).unwrap();
            let mut expected = BTreeSet::new();
            for i in 0..40u64 {
                let line = LineAddr((i * 7 + w) % 23);
                n.record_access(WindowId(w), line, DL2, AccessKind::Store)
                    .unwrap();
                expected.insert((line, LevelKind::L1d));
                expected.insert((line, LevelKind::L2));
            }
            let reqs = notifies(
                &n.emit_notifications(WindowId(w), NotifyKind::Commit)
                    .unwrap(),
            );
            let got: BTreeSet<_> = reqs.iter().map(|r| (r.line, r.level)).collect();
            assert_eq!(got, expected);
            assert_eq!(reqs.len(), expected.len());
            assert!(n.stats.max_occupancy <= NFB_ENTRIES);
        }
        assert_eq!(n.stats.delivered, n.stats.offered - n.stats.merged);
    }
}
