//! Synthetic reference-squash-rereference workload for capacity sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::SimConfig;
use crate::engine::Simulator;
use crate::error::{Result, SimError};
use crate::trace::TraceEvent;
use crate::types::{LevelKind, WindowId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RsrWorkload {
    pub seed: u64,
    pub windows: usize,
    pub accesses_per_window: usize,
    /// Distinct lines touched by the workload.
    pub footprint: u64,
    pub squash_ratio: f64,
}

impl Default for RsrWorkload {
    fn default() -> Self {
        RsrWorkload {
            seed: 1,
            windows: 2000,
            accesses_per_window: 6,
            footprint: 4096,
            squash_ratio: 0.3,
        }
    }
}

impl RsrWorkload {
    /// A wrong-path window touches some lines, the correct path re-references
    /// them while the wrong path is still unresolved, then the wrong path is
    /// squashed before the correct path commits.
    pub fn trace(&self) -> Vec<TraceEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ev = Vec::new();
        let mut w = 1u64;
        for _ in 0..self.windows {
            let addrs: Vec<u64> = (0..self.accesses_per_window)
                .map(|_| rng.gen_range(0..self.footprint) * 64)
                .collect();
            let (correct, wrong) = (w, w + 1);
            w += 2;
            let squash = rng.gen_bool(self.squash_ratio);
            if squash {
                ev.push(TraceEvent::open(wrong, 0));
                ev.extend(addrs.iter().map(|&a| TraceEvent::load(a, wrong, 0)));
            }
            ev.push(TraceEvent::open(correct, 0));
            ev.extend(addrs.iter().map(|&a| TraceEvent::load(a, correct, 0)));
            if squash {
                ev.push(TraceEvent::Squash(WindowId(wrong)));
            }
            ev.push(TraceEvent::Commit(WindowId(correct)));
        }
        ev
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub level: LevelKind,
    pub cap_t: usize,
    pub l1d_misses: u64,
    pub l2_misses: u64,
    pub rsr_reinstalls: u64,
    pub accesses: u64,
}

/// Runs the workload once per temporary capacity of `level`.
pub fn sweep(
    base: &SimConfig,
    level: LevelKind,
    workload: &RsrWorkload,
) -> Result<Vec<SweepPoint>> {
    let trace = workload.trace();
    let ways = base.level(level).ways;
    let mut out = Vec::new();
    for cap in 0..ways {
        let mut cfg = base.clone();
        cfg.level_mut(level).cap_t = cap;
        let mut sim = Simulator::new(cfg)?;
        sim.run(&trace)?;
        let r = sim.report();
        let misses = |l: LevelKind| {
            r.levels
                .get(&l)
                .map_or(0, |s| s.misses + s.emulated_misses + s.bypasses)
        };
        out.push(SweepPoint {
            level,
            cap_t: cap,
            l1d_misses: misses(LevelKind::L1d),
            l2_misses: misses(LevelKind::L2),
            rsr_reinstalls: r.rsr_reinstalls,
            accesses: r.levels.get(&LevelKind::L1d).map_or(0, |s| s.accesses),
        });
    }
    Ok(out)
}

pub fn sweep_csv(points: &[SweepPoint]) -> Result<String> {
    let csv_err = |e: csv::Error| SimError::Config(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SimError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_is_seeded() {
        let w = RsrWorkload {
            windows: 50,
            ..RsrWorkload::default()
        };
        assert_eq!(w.trace(), w.trace());
        let other = RsrWorkload { seed: 2, ..w };
        assert_ne!(w.trace(), other.trace());
    }

    #[test]
    fn sweep_covers_every_capacity() {
        let w = RsrWorkload {
            windows: 100,
            ..RsrWorkload::default()
        };
        let pts = sweep(&SimConfig::default(), LevelKind::L1d, &w).unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[0].rsr_reinstalls, 0);
        assert!(pts.iter().skip(1).all(|p| p.rsr_reinstalls > 0));
        let csv = sweep_csv(&pts).unwrap();
        assert!(csv.starts_with("level,cap_t,l1d_misses,l2_misses,rsr_reinstalls,accesses\n"));
        assert_eq!(csv.lines().count(), 9);
    }
}
