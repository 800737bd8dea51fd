//! Simulator configuration, loadable from TOML.

use serde::{Deserialize, Serialize};

use crate::cache::CacheGeometry;
use crate::error::{Result, SimError};
use crate::report::Thresholds;
use crate::types::{LevelKind, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub sets: usize,
    pub ways: usize,
    pub cap_t: usize,
    pub hit_cycles: u64,
    /// Round trip to a bank homed on another core (shared level only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_cycles: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Specbox,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Mode::Baseline),
            "specbox" => Ok(Mode::Specbox),
            other => Err(format!(
                "unknown mode `{other}`; expected baseline or specbox"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cores: usize,
    pub smt: usize,
    pub memory_cycles: u64,
    /// Forces an unpartitioned, unprotected hierarchy regardless of the
    /// other switches.
    pub baseline: bool,
    pub tos: bool,
    /// Levels that track thread ownership. Defaults to the shared level, plus
    /// the first level when cores run more than one hardware thread.
    pub tos_levels: Option<Vec<LevelKind>>,
    pub coherence_delay: bool,
    pub aux_rules: bool,
    pub stride_prefetcher: bool,
    pub nfb_entries: usize,
    pub thresholds: Thresholds,
    pub l1i: LevelConfig,
    pub l1d: LevelConfig,
    pub l2: LevelConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 8,
            smt: 1,
            memory_cycles: 150,
            baseline: false,
            tos: true,
            tos_levels: None,
            coherence_delay: true,
            aux_rules: true,
            stride_prefetcher: false,
            nfb_entries: 16,
            thresholds: Thresholds::default(),
            l1i: LevelConfig {
                sets: 128,
                ways: 4,
                cap_t: 2,
                hit_cycles: 1,
                remote_cycles: None,
            },
            l1d: LevelConfig {
                sets: 128,
                ways: 8,
                cap_t: 2,
                hit_cycles: 1,
                remote_cycles: None,
            },
            l2: LevelConfig {
                sets: 2048,
                ways: 16,
                cap_t: 3,
                hit_cycles: 8,
                remote_cycles: Some(16),
            },
        }
    }
}

impl SimConfig {
    pub fn for_mode(mode: Mode) -> Self {
        SimConfig::default().with_mode(mode)
    }

    /// Switches every protection on (specbox) or off (baseline), keeping the
    /// geometry and latencies.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        let defaults = SimConfig::default();
        match mode {
            Mode::Baseline => self.baseline = true,
            Mode::Specbox => {
                self.baseline = false;
                self.tos = true;
                self.coherence_delay = true;
                self.aux_rules = true;
                for (lvl, d) in [
                    (&mut self.l1i, defaults.l1i),
                    (&mut self.l1d, defaults.l1d),
                    (&mut self.l2, defaults.l2),
                ] {
                    if lvl.cap_t == 0 {
                        lvl.cap_t = d.cap_t.min(lvl.ways - 1);
                    }
                }
            }
        }
        self.normalized()
    }

    /// Resolves the `baseline` switch into the individual settings.
    pub fn normalized(mut self) -> Self {
        if self.baseline {
            self.tos = false;
            self.coherence_delay = false;
            self.aux_rules = false;
            self.l1i.cap_t = 0;
            self.l1d.cap_t = 0;
            self.l2.cap_t = 0;
        }
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn level(&self, level: LevelKind) -> &LevelConfig {
        match level {
            LevelKind::L1i => &self.l1i,
            LevelKind::L1d => &self.l1d,
            LevelKind::L2 => &self.l2,
        }
    }

    pub fn level_mut(&mut self, level: LevelKind) -> &mut LevelConfig {
        match level {
            LevelKind::L1i => &mut self.l1i,
            LevelKind::L1d => &mut self.l1d,
            LevelKind::L2 => &mut self.l2,
        }
    }

    pub fn geometry(&self, level: LevelKind) -> Result<CacheGeometry> {
        let l = self.level(level);
        CacheGeometry::new(level, l.sets, l.ways, level == LevelKind::L2)
    }

    pub fn threads(&self) -> usize {
        self.cores * self.smt
    }

    pub fn core_of(&self, thread: ThreadId) -> usize {
        thread.0 as usize / self.smt
    }

    pub fn tos_on(&self, level: LevelKind) -> bool {
        if !self.tos {
            return false;
        }
        match &self.tos_levels {
            Some(levels) => levels.contains(&level),
            None => level == LevelKind::L2 || self.smt > 1,
        }
    }

    pub fn l2_remote_cycles(&self) -> u64 {
        self.l2.remote_cycles.unwrap_or(self.l2.hit_cycles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores == 0 || self.smt == 0 {
            return Err(SimError::Config("cores and smt must be at least 1".into()));
        }
        if self.threads() > 64 {
            return Err(SimError::Config(format!(
                "{} hardware threads exceed the 64-bit owner mask",
                self.threads()
            )));
        }
        if self.thresholds.hit_below > self.thresholds.miss_above + 1 {
            return Err(SimError::Config(
                "hit threshold lies above the miss threshold".into(),
            ));
        }
        for level in LevelKind::ALL {
            let g = self.geometry(level)?;
            let cap = self.level(level).cap_t;
            if cap >= g.ways {
                return Err(SimError::CapacityOutOfRange {
                    level,
                    cap,
                    ways: g.ways,
                });
            }
        }
        Ok(())
    }
}
