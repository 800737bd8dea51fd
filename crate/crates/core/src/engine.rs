//! Event loop tying the caches, notifier, directory and auxiliary rules
//! together.
//!
//! Each data or fetch access walks L1 → L2 → memory. Accesses inside a
//! speculation window are in-flight; `COMMIT`/`SQUASH` hand the window's
//! record to the notifier whose requests are then applied level by level.
//! Operations that must not run speculatively are parked as deferred tokens
//! in the window record and executed at their program position on commit.

use std::collections::BTreeMap;

use crate::cache::{Domain, MesiState};
use crate::coherence::{CoherenceDecision, CoreId, Directory, RemoteEffect, Speculative};
use crate::config::SimConfig;
use crate::domains::{
    AccessResult, CommitOutcome, DomainCache, DomainConfig, PathLatency, RetryEffect, SquashOutcome,
};
use crate::error::{Result, SimError};
use crate::notifier::{Emission, NotificationRequest, Notifier, NotifyKind, WindowStatus};
use crate::prefetch::StridePrefetcher;
use crate::report::{LevelStats, SimReport, TimingObservation};
use crate::trace::{MgmtOp, TraceEvent};
use crate::types::{AccessKind, LevelKind, LevelMask, LineAddr, ThreadId, WindowId};

/// Work held back until its window's verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DeferredOp {
    /// Whole access replayed as committed (coherence delay, TLB miss).
    Replay {
        kind: AccessKind,
        line: LineAddr,
        thread: ThreadId,
    },
    /// Directory registration for an access that needed no remote action.
    Register {
        line: LineAddr,
        core: CoreId,
        store: bool,
    },
    Mgmt {
        op: MgmtOp,
        line: LineAddr,
        thread: ThreadId,
    },
    Train {
        line: LineAddr,
        core: CoreId,
    },
}

#[derive(Clone, Debug, Default)]
struct Counters {
    events: u64,
    committed: u64,
    squashed: u64,
    deferred_mgmt: u64,
    deferred_tlb: u64,
    prefetches: u64,
}

pub struct Simulator {
    config: SimConfig,
    l1i: Vec<DomainCache>,
    l1d: Vec<DomainCache>,
    l2: DomainCache,
    notifier: Notifier,
    directory: Directory,
    prefetcher: StridePrefetcher,
    deferred: BTreeMap<u64, DeferredOp>,
    next_token: u64,
    next_internal: u64,
    counters: Counters,
    observations: Vec<TimingObservation>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let make = |level: LevelKind| -> Result<DomainCache> {
            let l = config.level(level);
            DomainCache::new(
                config.geometry(level)?,
                DomainConfig {
                    cap_t: l.cap_t,
                    hit_cycles: l.hit_cycles,
                },
                config.tos_on(level),
            )
        };
        let l1i = (0..config.cores)
            .map(|_| make(LevelKind::L1i))
            .collect::<Result<_>>()?;
        let l1d = (0..config.cores)
            .map(|_| make(LevelKind::L1d))
            .collect::<Result<_>>()?;
        let l2 = make(LevelKind::L2)?;
        let mut sim = Simulator {
            l1i,
            l1d,
            l2,
            notifier: Notifier::new(config.nfb_entries),
            directory: Directory::new(config.coherence_delay),
            prefetcher: StridePrefetcher::default(),
            deferred: BTreeMap::new(),
            next_token: 0,
            next_internal: WindowId::INTERNAL_BASE,
            counters: Counters::default(),
            observations: Vec::new(),
            config,
        };
        sim.update_suppression();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn l1d(&self, core: usize) -> &DomainCache {
        &self.l1d[core]
    }

    pub fn l1i(&self, core: usize) -> &DomainCache {
        &self.l1i[core]
    }

    pub fn l2(&self) -> &DomainCache {
        &self.l2
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn observations(&self) -> &[TimingObservation] {
        &self.observations
    }

    /// Every cache instance in a fixed order: per core L1-I then L1-D, then L2.
    pub fn caches(&self) -> impl Iterator<Item = &DomainCache> {
        self.l1i
            .iter()
            .zip(&self.l1d)
            .flat_map(|(i, d)| [i, d])
            .chain(std::iter::once(&self.l2))
    }

    fn update_suppression(&mut self) {
        let mask = LevelKind::ALL
            .into_iter()
            .filter(|l| self.config.level(*l).cap_t == 0)
            .collect::<LevelMask>();
        self.notifier.suppress(mask);
    }

    fn cache_mut(&mut self, level: LevelKind, core: CoreId) -> &mut DomainCache {
        match level {
            LevelKind::L1i => &mut self.l1i[core],
            LevelKind::L1d => &mut self.l1d[core],
            LevelKind::L2 => &mut self.l2,
        }
    }

    fn core_of(&self, thread: ThreadId) -> CoreId {
        self.config.core_of(thread)
    }

    fn check_thread(&self, thread: ThreadId) -> Result<()> {
        if (thread.0 as usize) < self.config.threads() {
            Ok(())
        } else {
            Err(SimError::UnknownThread(thread))
        }
    }

    fn check_window(&self, window: WindowId, thread: ThreadId) -> Result<()> {
        self.check_thread(thread)?;
        let rec = self
            .notifier
            .record(window)
            .ok_or(SimError::UnknownWindow(window))?;
        if rec.status != WindowStatus::Open {
            return Err(SimError::WindowClosed(window));
        }
        if rec.thread != thread {
            return Err(SimError::ThreadMismatch {
                window,
                owner: rec.thread,
                thread,
            });
        }
        Ok(())
    }

    fn token(&mut self, op: DeferredOp) -> u64 {
        let t = self.next_token;
        self.next_token += 1;
        self.deferred.insert(t, op);
        t
    }

    fn bank_cycles(&self, line: LineAddr, core: CoreId) -> u64 {
        if (line.0 % self.config.cores as u64) as usize == core {
            self.config.l2.hit_cycles
        } else {
            self.config.l2_remote_cycles()
        }
    }

    pub fn run(&mut self, events: &[TraceEvent]) -> Result<()> {
        for (i, ev) in events.iter().enumerate() {
            self.step(ev).map_err(|e| e.at_event(i + 1))?;
        }
        Ok(())
    }

    pub fn step(&mut self, event: &TraceEvent) -> Result<()> {
        self.counters.events += 1;
        match *event {
            TraceEvent::Open { window, thread } => {
                self.check_thread(thread)?;
                self.notifier.open(window, thread)?;
            }
            TraceEvent::Access {
                kind,
                addr,
                window,
                thread,
            } => {
                self.check_window(window, thread)?;
                self.inflight_access(kind, LineAddr::from_byte(addr), window, thread, true)?;
            }
            TraceEvent::Prefetch { addr, thread } => {
                self.check_thread(thread)?;
                self.hardware_prefetch(LineAddr::from_byte(addr));
            }
            TraceEvent::Mgmt {
                op,
                addr,
                window,
                thread,
            } => {
                self.check_window(window, thread)?;
                let line = LineAddr::from_byte(addr);
                if self.config.aux_rules {
                    let t = self.token(DeferredOp::Mgmt { op, line, thread });
                    self.notifier.record_deferred(window, t)?;
                    self.counters.deferred_mgmt += 1;
                } else {
                    self.execute_mgmt(op, line, thread)?;
                }
            }
            TraceEvent::TlbMissLoad {
                addr,
                window,
                thread,
            } => {
                self.check_window(window, thread)?;
                let line = LineAddr::from_byte(addr);
                if self.config.aux_rules {
                    let t = self.token(DeferredOp::Replay {
                        kind: AccessKind::Load,
                        line,
                        thread,
                    });
                    self.notifier.record_deferred(window, t)?;
                    self.counters.deferred_tlb += 1;
                } else {
                    self.inflight_access(AccessKind::Load, line, window, thread, true)?;
                }
            }
            TraceEvent::Commit(w) => {
                self.close(w, NotifyKind::Commit)?;
                self.counters.committed += 1;
            }
            TraceEvent::Squash(w) => {
                self.close(w, NotifyKind::Squash)?;
                self.counters.squashed += 1;
            }
            TraceEvent::Measure {
                addr,
                thread,
                store,
            } => {
                self.check_thread(thread)?;
                self.measure(addr, thread, store)?;
            }
            TraceEvent::Barrier => {}
        }
        self.retry_suspended();
        Ok(())
    }

    /// Timed committed probe by `thread`.
    pub fn measure(
        &mut self,
        addr: u64,
        thread: ThreadId,
        store: bool,
    ) -> Result<TimingObservation> {
        let kind = if store {
            AccessKind::Store
        } else {
            AccessKind::Load
        };
        let latency = self.committed_access(kind, LineAddr::from_byte(addr), thread)?;
        let obs = TimingObservation {
            thread,
            address: LineAddr::from_byte(addr).byte_addr(),
            latency,
            class: self.config.thresholds.classify(latency),
        };
        self.observations.push(obs);
        Ok(obs)
    }

    /// Runs one access in a private window that commits immediately.
    fn committed_access(
        &mut self,
        kind: AccessKind,
        line: LineAddr,
        thread: ThreadId,
    ) -> Result<u64> {
        let window = WindowId(self.next_internal);
        self.next_internal += 1;
        self.notifier.open(window, thread)?;
        let latency = self.inflight_access(kind, line, window, thread, false)?;
        self.close(window, NotifyKind::Commit)?;
        Ok(latency)
    }

    fn inflight_access(
        &mut self,
        kind: AccessKind,
        line: LineAddr,
        window: WindowId,
        thread: ThreadId,
        speculative: bool,
    ) -> Result<u64> {
        let core = self.core_of(thread);
        let l1_level = kind.l1();
        let l1_hit = self.config.level(l1_level).hit_cycles;
        let bank = self.bank_cycles(line, core);
        let memory = self.config.memory_cycles;

        let prior_coh = self.l1d[core].lookup(line).map(|(way, _)| {
            let set = self.l1d[core].geometry.set_index(line);
            self.l1d[core].set(set).ways[way].coh
        });

        let mut register = None;
        if kind.is_data() {
            let spec = speculative.then_some(Speculative {
                window,
                token: self.next_token,
            });
            let store = kind == AccessKind::Store;
            let decision = if store {
                self.directory.coherent_store(line, core, spec)
            } else {
                self.directory.coherent_load(line, core, spec)
            };
            match decision {
                CoherenceDecision::Delayed => {
                    let t = self.token(DeferredOp::Replay { kind, line, thread });
                    self.notifier.record_deferred(window, t)?;
                    return Ok(0);
                }
                CoherenceDecision::Proceed {
                    state,
                    effects,
                    registered,
                } => {
                    self.apply_remote_effects(&effects);
                    register = Some((registered, state, store));
                }
            }
        }

        let probe = self.cache_mut(l1_level, core).probe(line, thread);
        let mut mask = LevelMask::EMPTY.with(l1_level);
        let latency = if probe.visible_hit() {
            let out = self.cache_mut(l1_level, core).access_inflight(
                line,
                thread,
                window,
                PathLatency {
                    hit: l1_hit,
                    miss: l1_hit,
                },
            );
            if out.result == AccessResult::HitTemporary {
                mask = mask.with(LevelKind::L2);
            }
            let upgrade = kind == AccessKind::Store && prior_coh == Some(MesiState::S);
            if upgrade {
                l1_hit + bank
            } else {
                out.latency
            }
        } else if probe != crate::domains::Probe::Miss {
            // Resident but hidden from this thread: charge the path below
            // without touching it.
            mask = mask.with(LevelKind::L2);
            let below = if self.l2.probe(line, thread).visible_hit() {
                bank
            } else {
                bank + memory
            };
            self.cache_mut(l1_level, core)
                .access_inflight(
                    line,
                    thread,
                    window,
                    PathLatency {
                        hit: l1_hit,
                        miss: l1_hit + below,
                    },
                )
                .latency
        } else {
            mask = mask.with(LevelKind::L2);
            let l2_out = self.l2.access_inflight(
                line,
                thread,
                window,
                PathLatency {
                    hit: bank,
                    miss: bank + memory,
                },
            );
            let path = PathLatency {
                hit: l1_hit,
                miss: l1_hit + l2_out.latency,
            };
            let out = self
                .cache_mut(l1_level, core)
                .access_inflight(line, thread, window, path);
            if let (Some(evicted), LevelKind::L1d) = (out.evicted, l1_level) {
                self.directory.remove_sharer(evicted, core);
            }
            out.latency
        };

        self.notifier.record_access(window, line, mask, kind)?;

        if let Some((registered, state, store)) = register {
            if registered {
                self.set_l1d_coh(core, line, state);
            } else {
                let t = self.token(DeferredOp::Register { line, core, store });
                self.notifier.record_deferred(window, t)?;
            }
        }

        if self.config.stride_prefetcher && kind.is_data() {
            if speculative && self.config.aux_rules {
                let t = self.token(DeferredOp::Train { line, core });
                self.notifier.record_deferred(window, t)?;
            } else {
                self.train_prefetcher(line, core);
            }
        }
        Ok(latency)
    }

    fn apply_remote_effects(&mut self, effects: &[RemoteEffect]) {
        for e in effects {
            match *e {
                RemoteEffect::Downgrade { core, line } => {
                    self.set_l1d_coh(core, line, MesiState::S)
                }
                RemoteEffect::Invalidate { core, line } => {
                    self.l1d[core].invalidate_line(line);
                }
            }
        }
    }

    fn set_l1d_coh(&mut self, core: CoreId, line: LineAddr, state: MesiState) {
        let cache = &mut self.l1d[core];
        if let Some((way, _)) = cache.lookup(line) {
            let set = cache.geometry.set_index(line);
            cache.set_mut(set).ways[way].coh = state;
        }
    }

    fn train_prefetcher(&mut self, line: LineAddr, core: CoreId) {
        if let Some(next) = self.prefetcher.train(core, line) {
            self.hardware_prefetch(next);
        }
    }

    /// Prefetched lines go straight to the persistent domain of L2.
    fn hardware_prefetch(&mut self, line: LineAddr) {
        if self.l2.install_persistent(line).is_some() {
            self.counters.prefetches += 1;
        }
    }

    fn execute_mgmt(&mut self, op: MgmtOp, line: LineAddr, thread: ThreadId) -> Result<()> {
        match op {
            MgmtOp::Flush | MgmtOp::Invd => {
                for c in self.l1i.iter_mut().chain(self.l1d.iter_mut()) {
                    c.invalidate_line(line);
                }
                self.l2.invalidate_line(line);
                self.directory.remove_line(line);
            }
            MgmtOp::Prefetch => {
                self.committed_access(AccessKind::Load, line, thread)?;
            }
        }
        Ok(())
    }

    fn close(&mut self, window: WindowId, verdict: NotifyKind) -> Result<()> {
        let emissions = self.notifier.emit_notifications(window, verdict)?;
        let committed = verdict == NotifyKind::Commit;
        self.directory.release_delayed(window, committed);
        for e in emissions {
            match e {
                Emission::Notify(req) => self.deliver(req),
                Emission::Deferred(token) => {
                    let op = self
                        .deferred
                        .remove(&token)
                        .expect("deferred token is registered");
                    if committed {
                        self.execute_deferred(op)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn execute_deferred(&mut self, op: DeferredOp) -> Result<()> {
        match op {
            DeferredOp::Replay { kind, line, thread } => {
                self.committed_access(kind, line, thread)?;
            }
            DeferredOp::Register { line, core, store } => {
                if self.l1d[core].contains(line) {
                    let decision = if store {
                        self.directory.coherent_store(line, core, None)
                    } else {
                        self.directory.coherent_load(line, core, None)
                    };
                    if let CoherenceDecision::Proceed { state, effects, .. } = decision {
                        self.apply_remote_effects(&effects);
                        self.set_l1d_coh(core, line, state);
                    }
                }
            }
            DeferredOp::Mgmt { op, line, thread } => self.execute_mgmt(op, line, thread)?,
            DeferredOp::Train { line, core } => self.train_prefetcher(line, core),
        }
        Ok(())
    }

    fn deliver(&mut self, req: NotificationRequest) {
        let core = self.core_of(req.thread);
        let cache = self.cache_mut(req.level, core);
        let evicted = match req.kind {
            NotifyKind::Commit => {
                let outcome = cache.apply_commit(req.line);
                if let (CommitOutcome::Reinstalled { .. }, LevelKind::L1d) = (outcome, req.level) {
                    let state = self.directory.state_of(req.line, core);
                    if state != MesiState::I {
                        self.set_l1d_coh(core, req.line, state);
                    }
                }
                outcome.evicted()
            }
            NotifyKind::Squash => match cache.apply_squash(req.line, req.thread) {
                SquashOutcome::Invalidated(l) => Some(l),
                _ => None,
            },
        };
        if let (Some(line), LevelKind::L1d) = (evicted, req.level) {
            self.directory.remove_sharer(line, core);
        }
    }

    fn retry_suspended(&mut self) {
        let notifier = &self.notifier;
        let status = |w: WindowId| notifier.status(w).unwrap_or(WindowStatus::Squashed);
        let mut l1d_evictions = Vec::new();
        for (core, c) in self.l1d.iter_mut().enumerate() {
            if c.suspended().is_empty() {
                continue;
            }
            for eff in c.retry_suspended(status, |_| true) {
                if let RetryEffect::InstalledTemporary {
                    evicted: Some(l), ..
                } = eff
                {
                    l1d_evictions.push((l, core));
                }
            }
        }
        for c in self.l1i.iter_mut().chain(std::iter::once(&mut self.l2)) {
            if !c.suspended().is_empty() {
                c.retry_suspended(status, |_| true);
            }
        }
        for (line, core) in l1d_evictions {
            self.directory.remove_sharer(line, core);
        }
    }

    fn has_open_windows(&self) -> bool {
        self.notifier.open_windows().next().is_some()
    }

    /// Changes the temporary way budget of `level` on every instance.
    pub fn reconfigure_domains(&mut self, level: LevelKind, cap: usize) -> Result<()> {
        if self.has_open_windows() {
            return Err(SimError::NotQuiescent);
        }
        let cores = self.config.cores;
        let mut dropped = Vec::new();
        match level {
            LevelKind::L2 => {
                self.l2.reconfigure(cap)?;
            }
            _ => {
                for core in 0..cores {
                    let lines = self.cache_mut(level, core).reconfigure(cap)?;
                    if level == LevelKind::L1d {
                        dropped.extend(lines.into_iter().map(|l| (l, core)));
                    }
                }
            }
        }
        for (line, core) in dropped {
            self.directory.remove_sharer(line, core);
        }
        self.config.level_mut(level).cap_t = cap;
        self.update_suppression();
        Ok(())
    }

    /// Structural invariants across every component.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for c in self.caches() {
            c.check_invariants()?;
            if !c.stats.conserves() {
                return Err(format!(
                    "{}: access counters do not conserve",
                    c.geometry.level
                ));
            }
        }
        if self.notifier.occupancy() > self.config.nfb_entries
            || self.notifier.stats.max_occupancy > self.config.nfb_entries
        {
            return Err("notification buffer over capacity".into());
        }
        self.directory.check_swmr()?;
        for d in self.directory.pending() {
            if self.notifier.status(d.window) != Some(WindowStatus::Open) {
                return Err(format!("delayed transition outlives window {}", d.window));
            }
        }
        Ok(())
    }

    /// Persistent-domain contents of every set, most recent first.
    pub fn persistent_snapshot(&self) -> Vec<Vec<u64>> {
        self.caches()
            .flat_map(|c| c.sets().iter())
            .map(|s| {
                s.lru_order(Domain::Persistent)
                    .iter()
                    .rev()
                    .map(|&w| s.ways[w].tag)
                    .collect()
            })
            .collect()
    }

    pub fn report(&self) -> SimReport {
        let mut levels: BTreeMap<LevelKind, LevelStats> = BTreeMap::new();
        for c in self.caches() {
            levels.entry(c.geometry.level).or_default().merge(&c.stats);
        }
        let total = |f: fn(&LevelStats) -> u64| levels.values().map(f).sum::<u64>();
        SimReport {
            events: self.counters.events,
            windows_committed: self.counters.committed,
            windows_squashed: self.counters.squashed,
            emulated_misses: total(|s| s.emulated_misses),
            suspended_installs: total(|s| s.suspended),
            rsr_reinstalls: total(|s| s.reinstalls),
            nfb: self.notifier.stats,
            coherent_ops: self.directory.stats.operations,
            delayed_coherence: self.directory.stats.delayed,
            delayed_fraction: self.directory.delayed_fraction(),
            deferred_mgmt: self.counters.deferred_mgmt,
            deferred_tlb: self.counters.deferred_tlb,
            prefetches_issued: self.counters.prefetches,
            observations: self.observations.clone(),
            levels,
        }
    }
}

/// Runs `events` on a fresh simulator.
pub fn run(events: &[TraceEvent], config: &SimConfig) -> Result<SimReport> {
    let mut sim = Simulator::new(config.clone())?;
    sim.run(events)?;
    Ok(sim.report())
}
