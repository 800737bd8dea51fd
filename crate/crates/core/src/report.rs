//! Run counters, timing observations and their serialized forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::notifier::NotifierStats;
use crate::types::{LevelKind, ThreadId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub hits_temporary: u64,
    pub hits_persistent: u64,
    /// Temporary-line hits by a non-owner, charged as misses.
    pub emulated_misses: u64,
    pub misses: u64,
    pub bypasses: u64,
    pub suspended: u64,
    pub promotions: u64,
    pub reinstalls: u64,
    pub squash_invalidations: u64,
    pub squash_releases: u64,
    pub evictions: u64,
}

impl LevelStats {
    pub fn merge(&mut self, o: &LevelStats) {
        self.accesses += o.accesses;
        self.hits_temporary += o.hits_temporary;
        self.hits_persistent += o.hits_persistent;
        self.emulated_misses += o.emulated_misses;
        self.misses += o.misses;
        self.bypasses += o.bypasses;
        self.suspended += o.suspended;
        self.promotions += o.promotions;
        self.reinstalls += o.reinstalls;
        self.squash_invalidations += o.squash_invalidations;
        self.squash_releases += o.squash_releases;
        self.evictions += o.evictions;
    }

    pub fn hits(&self) -> u64 {
        self.hits_temporary + self.hits_persistent
    }

    /// `accesses = hits + emulated misses + misses + bypasses`.
    pub fn conserves(&self) -> bool {
        self.accesses == self.hits() + self.emulated_misses + self.misses + self.bypasses
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LatencyClass {
    Hit,
    Miss,
    /// Between the two thresholds.
    Unclassified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hit_below: u64,
    pub miss_above: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            hit_below: 50,
            miss_above: 150,
        }
    }
}

impl Thresholds {
    pub fn classify(&self, latency: u64) -> LatencyClass {
        if latency < self.hit_below {
            LatencyClass::Hit
        } else if latency > self.miss_above {
            LatencyClass::Miss
        } else {
            LatencyClass::Unclassified
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingObservation {
    pub thread: ThreadId,
    /// Byte address of the measured line.
    pub address: u64,
    pub latency: u64,
    pub class: LatencyClass,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimReport {
    pub events: u64,
    pub windows_committed: u64,
    pub windows_squashed: u64,
    pub levels: BTreeMap<LevelKind, LevelStats>,
    pub emulated_misses: u64,
    pub suspended_installs: u64,
    pub rsr_reinstalls: u64,
    pub nfb: NotifierStats,
    pub coherent_ops: u64,
    pub delayed_coherence: u64,
    pub delayed_fraction: f64,
    pub deferred_mgmt: u64,
    pub deferred_tlb: u64,
    pub prefetches_issued: u64,
    pub observations: Vec<TimingObservation>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn observations_csv(&self) -> Result<String> {
        observations_to_csv(&self.observations)
    }
}

#[derive(Serialize)]
struct CsvRow {
    index: usize,
    thread: u32,
    address: String,
    latency: u64,
    class: LatencyClass,
}

pub fn observations_to_csv(obs: &[TimingObservation]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (index, o) in obs.iter().enumerate() {
        w.serialize(CsvRow {
            index,
            thread: o.thread.0,
            address: format!("{:#x}", o.address),
            latency: o.latency,
            class: o.class,
        })
        .map_err(|e| SimError::Config(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SimError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
