#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specsim_core::config::{LevelConfig, Mode, SimConfig};
use specsim_core::trace::{MgmtOp, TraceEvent};
use specsim_core::types::{AccessKind, ThreadId, WindowId};

/// Small hierarchy so random traces collide in sets often.
pub fn small_config(mode: Mode, cores: usize, smt: usize) -> SimConfig {
    let level = |sets, ways, cap_t, hit_cycles, remote_cycles| LevelConfig {
        sets,
        ways,
        cap_t,
        hit_cycles,
        remote_cycles,
    };
    SimConfig {
        cores,
        smt,
        l1i: level(4, 4, 2, 1, None),
        l1d: level(8, 4, 2, 1, None),
        l2: level(32, 8, 3, 8, Some(16)),
        ..SimConfig::default()
    }
    .with_mode(mode)
}

#[derive(Clone, Copy)]
enum Slot {
    Fixed(u64),
    /// Address index drawn per pair member.
    Free(usize),
}

#[derive(Clone, Copy)]
enum Op {
    Open(u64, u32),
    Access(AccessKind, Slot, u64, u32),
    Tlb(Slot, u64, u32),
    Mgmt(MgmtOp, Slot, u64, u32),
    Prefetch(u64, u32),
    Commit(u64),
    Squash(u64),
    Measure(u64, u32, bool),
}

/// A random trace whose squashed windows access free address slots. Two
/// instantiations differ only in those addresses.
pub struct PairTemplate {
    ops: Vec<Op>,
    free_slots: usize,
}

pub struct FuzzParams {
    pub threads: u32,
    pub lines: u64,
    pub steps: usize,
    pub max_open: usize,
}

fn addr(line: u64) -> u64 {
    line * 64
}

impl PairTemplate {
    pub fn generate(rng: &mut ChaCha8Rng, p: &FuzzParams) -> Self {
        let mut ops = Vec::new();
        let mut open: Vec<Vec<(u64, bool)>> = vec![Vec::new(); p.threads as usize];
        let mut next_w = 1u64;
        let mut free_slots = 0usize;
        for _ in 0..p.steps {
            let t = rng.gen_range(0..p.threads);
            let mine = &mut open[t as usize];
            let roll = rng.gen_range(0..100);
            if roll < 12 && mine.len() < p.max_open {
                let squash = rng.gen_bool(0.5);
                mine.push((next_w, squash));
                ops.push(Op::Open(next_w, t));
                next_w += 1;
            } else if roll < 60 && !mine.is_empty() {
                let (w, squash) = mine[rng.gen_range(0..mine.len())];
                let slot = if squash {
                    free_slots += 1;
                    Slot::Free(free_slots - 1)
                } else {
                    Slot::Fixed(rng.gen_range(0..p.lines))
                };
                let op = match rng.gen_range(0..20) {
                    0..=8 => Op::Access(AccessKind::Load, slot, w, t),
                    9..=13 => Op::Access(AccessKind::Store, slot, w, t),
                    14..=15 => Op::Access(AccessKind::Ifetch, slot, w, t),
                    16 => Op::Tlb(slot, w, t),
                    17 => Op::Mgmt(MgmtOp::Flush, slot, w, t),
                    18 => Op::Mgmt(MgmtOp::Prefetch, slot, w, t),
                    _ => Op::Mgmt(MgmtOp::Invd, slot, w, t),
                };
                ops.push(op);
            } else if roll < 75 && !mine.is_empty() {
                let (w, squash) = mine.remove(rng.gen_range(0..mine.len()));
                ops.push(if squash { Op::Squash(w) } else { Op::Commit(w) });
            } else if roll < 78 {
                ops.push(Op::Prefetch(rng.gen_range(0..p.lines), t));
            } else if mine.is_empty() {
                ops.push(Op::Measure(
                    rng.gen_range(0..p.lines),
                    t,
                    rng.gen_bool(0.25),
                ));
            }
        }
        for windows in &open {
            for &(w, squash) in windows {
                ops.push(if squash { Op::Squash(w) } else { Op::Commit(w) });
            }
        }
        for t in 0..p.threads {
            for l in 0..p.lines.min(8) {
                ops.push(Op::Measure(l, t, false));
            }
        }
        PairTemplate { ops, free_slots }
    }

    pub fn instantiate(&self, rng: &mut ChaCha8Rng, lines: u64) -> Vec<TraceEvent> {
        let free: Vec<u64> = (0..self.free_slots)
            .map(|_| rng.gen_range(0..lines))
            .collect();
        let resolve = |s: Slot| match s {
            Slot::Fixed(l) => addr(l),
            Slot::Free(i) => addr(free[i]),
        };
        self.ops
            .iter()
            .map(|op| match *op {
                Op::Open(w, t) => TraceEvent::open(w, t),
                Op::Access(kind, s, w, t) => TraceEvent::Access {
                    kind,
                    addr: resolve(s),
                    window: WindowId(w),
                    thread: ThreadId(t),
                },
                Op::Tlb(s, w, t) => TraceEvent::TlbMissLoad {
                    addr: resolve(s),
                    window: WindowId(w),
                    thread: ThreadId(t),
                },
                Op::Mgmt(op, s, w, t) => TraceEvent::mgmt(op, resolve(s), w, t),
                Op::Prefetch(l, t) => TraceEvent::Prefetch {
                    addr: addr(l),
                    thread: ThreadId(t),
                },
                Op::Commit(w) => TraceEvent::Commit(WindowId(w)),
                Op::Squash(w) => TraceEvent::Squash(WindowId(w)),
                Op::Measure(l, t, store) => TraceEvent::Measure {
                    addr: addr(l),
                    thread: ThreadId(t),
                    store,
                },
            })
            .collect()
    }

    pub fn has_free_slots(&self) -> bool {
        self.free_slots > 0
    }
}

/// Unconstrained random trace: any thread, any open window, measures at any
/// time.
pub fn random_trace(
    rng: &mut ChaCha8Rng,
    threads: u32,
    lines: u64,
    steps: usize,
) -> Vec<TraceEvent> {
    let mut ev = Vec::new();
    let mut open: Vec<(u64, u32)> = Vec::new();
    let mut next_w = 1u64;
    for _ in 0..steps {
        let t = rng.gen_range(0..threads);
        let a = addr(rng.gen_range(0..lines));
        let roll = rng.gen_range(0..100);
        if roll < 10 && open.len() < 8 {
            ev.push(TraceEvent::open(next_w, t));
            open.push((next_w, t));
            next_w += 1;
        } else if roll < 65 && !open.is_empty() {
            let (w, t) = open[rng.gen_range(0..open.len())];
            ev.push(match rng.gen_range(0..24) {
                0..=10 => TraceEvent::load(a, w, t),
                11..=16 => TraceEvent::store(a, w, t),
                17..=19 => TraceEvent::Access {
                    kind: AccessKind::Ifetch,
                    addr: a,
                    window: WindowId(w),
                    thread: ThreadId(t),
                },
                20 => TraceEvent::TlbMissLoad {
                    addr: a,
                    window: WindowId(w),
                    thread: ThreadId(t),
                },
                21 => TraceEvent::mgmt(MgmtOp::Flush, a, w, t),
                22 => TraceEvent::mgmt(MgmtOp::Prefetch, a, w, t),
                _ => TraceEvent::mgmt(MgmtOp::Invd, a, w, t),
            });
        } else if roll < 82 && !open.is_empty() {
            let (w, _) = open.remove(rng.gen_range(0..open.len()));
            ev.push(if rng.gen_bool(0.5) {
                TraceEvent::Commit(WindowId(w))
            } else {
                TraceEvent::Squash(WindowId(w))
            });
        } else if roll < 86 {
            ev.push(TraceEvent::Prefetch {
                addr: a,
                thread: ThreadId(t),
            });
        } else if roll < 88 {
            ev.push(TraceEvent::Barrier);
        } else {
            ev.push(TraceEvent::Measure {
                addr: a,
                thread: ThreadId(t),
                store: rng.gen_bool(0.2),
            });
        }
    }
    for (w, _) in open {
        ev.push(TraceEvent::Commit(WindowId(w)));
    }
    ev
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One step of a replacement history over a set with two 4-way domains.
#[derive(Clone, Copy, Debug)]
pub enum LruOp {
    Install(bool),
    Touch(usize),
    Invalidate(usize),
}

pub fn lru_op(kind: u8, arg: u8) -> LruOp {
    match kind % 3 {
        0 => LruOp::Install(arg.is_multiple_of(2)),
        1 => LruOp::Touch(arg as usize % 8),
        _ => LruOp::Invalidate(arg as usize % 8),
    }
}

/// Replays `ops` on a real set and on a brute-force model that records the
/// time of each way's last install or touch. Returns the first disagreement
/// between `select_victim` and the model.
pub fn lru_oracle_check(ops: &[LruOp]) -> Result<usize, String> {
    use specsim_core::cache::{CacheSetState, Domain};
    use specsim_core::tos::OwnerMask;

    const WAYS: usize = 8;
    let mut set = CacheSetState::new(WAYS, 4);
    let labels: Vec<Domain> = set.ways.iter().map(|w| w.domain).collect();
    let mut valid = [false; WAYS];
    let mut last_use = [0usize; WAYS];
    let mut next_tag = 1u64;
    let mut checks = 0usize;

    let model_victim = |valid: &[bool; WAYS], last_use: &[usize; WAYS], d: Domain| -> usize {
        let ways = (0..WAYS).filter(|&w| labels[w] == d);
        if let Some(free) = ways.clone().find(|&w| !valid[w]) {
            return free;
        }
        ways.min_by_key(|&w| last_use[w]).expect("domain has ways")
    };

    for (time, op) in ops.iter().enumerate() {
        let time = time + 1;
        for d in [Domain::Temporary, Domain::Persistent] {
            let got = set.select_victim(d).map_err(|e| e.to_string())?;
            let want = model_victim(&valid, &last_use, d);
            checks += 1;
            if got != want {
                return Err(format!(
                    "step {time} {d:?}: victim {got}, oracle {want}; ops {ops:?}"
                ));
            }
        }
        match *op {
            LruOp::Install(temporary) => {
                let d = if temporary {
                    Domain::Temporary
                } else {
                    Domain::Persistent
                };
                let way = model_victim(&valid, &last_use, d);
                set.install(way, next_tag, d, OwnerMask::EMPTY);
                next_tag += 1;
                valid[way] = true;
                last_use[way] = time;
            }
            LruOp::Touch(way) => {
                if valid[way] {
                    set.touch(way).map_err(|e| e.to_string())?;
                    last_use[way] = time;
                } else if set.touch(way).is_ok() {
                    return Err(format!("touch of invalid way {way} succeeded"));
                }
            }
            LruOp::Invalidate(way) => {
                set.invalidate(way);
                valid[way] = false;
            }
        }
    }
    Ok(checks)
}
