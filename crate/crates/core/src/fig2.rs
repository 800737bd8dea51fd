//! Six-step state-migration walkthrough on one 8-way set split 2:6.
//!
//! The persistent domain is prefilled with P0..P5 (P0 least recent). The
//! steps are: load A, load B, load C (three windows), commit A, commit B,
//! squash C. Expected states are written out by hand below.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::{CacheGeometry, Domain};
use crate::domains::{DomainCache, DomainConfig, PathLatency};
use crate::types::{LevelKind, LineAddr, ThreadId, WindowId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SetView {
    /// Valid temporary lines, sorted by name.
    pub temporary: Vec<String>,
    /// Valid persistent lines, most recent first.
    pub persistent: Vec<String>,
    pub temp_ways: usize,
    pub pers_ways: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepResult {
    pub step: usize,
    pub action: &'static str,
    pub expected: SetView,
    pub actual: SetView,
    pub matches: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig2Replay {
    pub steps: Vec<StepResult>,
    pub rsr_reinstalls: u64,
}

impl Fig2Replay {
    pub fn all_match(&self) -> bool {
        self.steps.len() == 6 && self.steps.iter().all(|s| s.matches) && self.rsr_reinstalls == 1
    }
}

const NAMES: [(u64, &str); 9] = [
    (0xa, "A"),
    (0xb, "B"),
    (0xc, "C"),
    (0x10, "P0"),
    (0x11, "P1"),
    (0x12, "P2"),
    (0x13, "P3"),
    (0x14, "P4"),
    (0x15, "P5"),
];

fn view(temporary: &[&str], persistent: &[&str]) -> SetView {
    let mut t: Vec<String> = temporary.iter().map(|s| s.to_string()).collect();
    t.sort();
    SetView {
        temporary: t,
        persistent: persistent.iter().map(|s| s.to_string()).collect(),
        temp_ways: 2,
        pers_ways: 6,
    }
}

fn expected() -> Vec<(&'static str, SetView)> {
    let p = ["P5", "P4", "P3", "P2", "P1", "P0"];
    vec![
        ("load A", view(&["A"], &p)),
        ("load B", view(&["A", "B"], &p)),
        ("load C", view(&["B", "C"], &p)),
        (
            "commit A",
            view(&["B", "C"], &["A", "P5", "P4", "P3", "P2", "P1"]),
        ),
        (
            "commit B",
            view(&["C"], &["B", "A", "P5", "P4", "P3", "P2"]),
        ),
        ("squash C", view(&[], &["B", "A", "P5", "P4", "P3", "P2"])),
    ]
}

fn observe(cache: &DomainCache, names: &BTreeMap<u64, &str>) -> SetView {
    let set = cache.set(0);
    let name = |w: usize| {
        names
            .get(&set.ways[w].tag)
            .copied()
            .unwrap_or("?")
            .to_string()
    };
    let mut temporary: Vec<String> = set
        .lru_order(Domain::Temporary)
        .into_iter()
        .map(name)
        .collect();
    temporary.sort();
    SetView {
        temporary,
        persistent: set
            .lru_order(Domain::Persistent)
            .into_iter()
            .rev()
            .map(name)
            .collect(),
        temp_ways: set.temp_count(),
        pers_ways: set.pers_count(),
    }
}

pub fn replay_fig2() -> Fig2Replay {
    let names: BTreeMap<u64, &str> = NAMES.into_iter().collect();
    let geometry = CacheGeometry::new(LevelKind::L1d, 1, 8, false).expect("valid geometry");
    let mut cache = DomainCache::new(
        geometry,
        DomainConfig {
            cap_t: 2,
            hit_cycles: 1,
        },
        false,
    )
    .expect("2 < 8");
    for tag in 0x10..=0x15 {
        cache.install_persistent(LineAddr(tag));
    }
    let thread = ThreadId(0);
    let lat = PathLatency { hit: 1, miss: 1 };
    let (a, b, c) = (LineAddr(0xa), LineAddr(0xb), LineAddr(0xc));
    let mut steps = Vec::new();
    for (i, (action, expected)) in expected().into_iter().enumerate() {
        match i {
            0 => {
                cache.access_inflight(a, thread, WindowId(1), lat);
            }
            1 => {
                cache.access_inflight(b, thread, WindowId(2), lat);
            }
            2 => {
                cache.access_inflight(c, thread, WindowId(3), lat);
            }
            3 => {
                cache.apply_commit(a);
            }
            4 => {
                cache.apply_commit(b);
            }
            _ => {
                cache.apply_squash(c, thread);
            }
        }
        let actual = observe(&cache, &names);
        steps.push(StepResult {
            step: i + 1,
            action,
            matches: actual == expected,
            expected,
            actual,
        });
    }
    Fig2Replay {
        steps,
        rsr_reinstalls: cache.stats.reinstalls,
    }
}
