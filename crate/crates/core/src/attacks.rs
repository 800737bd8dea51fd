//! Trace generators for covert-channel scenarios and the verdict analysis.
//!
//! Every scenario has three phases. Prepare puts the target line X into a
//! known state, Send performs the secret-dependent action inside a window
//! that is always squashed, and Receive measures X. For secret bit 0 the Send
//! window is opened and squashed with no access, so both runs share the same
//! window structure.
//!
//! Thread roles on the attack topology (two cores, two hardware threads
//! each): A = t0 and B = t1 share core 0; t2 runs on core 1.

use serde::Serialize;

use crate::coherence::DirectoryEntry;
use crate::config::{Mode, SimConfig};
use crate::engine::Simulator;
use crate::error::{Result, SimError};
use crate::report::{LatencyClass, Thresholds, TimingObservation};
use crate::trace::{MgmtOp, TraceEvent};
use crate::types::{LineAddr, WindowId};

pub const TARGET: u64 = 0x100000;
pub const PROBE_BASE: u64 = 0x200000;
pub const PROBE_ITEMS: usize = 256;
pub const PROBE_STRIDE: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    Prepare,
    Send,
    Receive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PhaseStep {
    pub phase: Phase,
    pub thread: u32,
    pub events: Vec<TraceEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub table_line: Option<u8>,
    pub secret_bit: u8,
    /// Receive runs while the Send window is still open.
    pub concurrent: bool,
    pub steps: Vec<PhaseStep>,
}

impl Scenario {
    pub fn trace(&self) -> Vec<TraceEvent> {
        self.steps
            .iter()
            .flat_map(|s| s.events.iter().copied())
            .collect()
    }
}

/// Scenario families understood by [`run_scenario`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Table1(u8),
    CoherenceE2S,
    CoherenceInval,
    Poc,
}

impl std::str::FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherence:e2s" => return Ok(ScenarioKind::CoherenceE2S),
            "coherence:inval" => return Ok(ScenarioKind::CoherenceInval),
            "poc" => return Ok(ScenarioKind::Poc),
            _ => {}
        }
        let line = s
            .strip_prefix("table1:")
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))?;
        if !(1..=6).contains(&line) {
            return Err(SimError::InvalidLine(line));
        }
        Ok(ScenarioKind::Table1(line))
    }
}

impl ScenarioKind {
    pub fn name(self) -> String {
        match self {
            ScenarioKind::Table1(n) => format!("table1:{n}"),
            ScenarioKind::CoherenceE2S => "coherence:e2s".into(),
            ScenarioKind::CoherenceInval => "coherence:inval".into(),
            ScenarioKind::Poc => "poc".into(),
        }
    }

    pub fn all() -> Vec<ScenarioKind> {
        let mut v: Vec<_> = (1..=6).map(ScenarioKind::Table1).collect();
        v.extend([
            ScenarioKind::CoherenceE2S,
            ScenarioKind::CoherenceInval,
            ScenarioKind::Poc,
        ]);
        v
    }
}

/// Hierarchy used by the layout and coherence scenarios.
pub fn attack_config(mode: Mode) -> SimConfig {
    SimConfig {
        cores: 2,
        smt: 2,
        ..SimConfig::default()
    }
    .with_mode(mode)
}

/// Coherence channels differ by one bank round trip at most, so the receiver
/// classifies against the first-level hit latency.
pub fn coherence_config(mode: Mode) -> SimConfig {
    let mut cfg = attack_config(mode);
    cfg.thresholds = Thresholds {
        hit_below: cfg.l1d.hit_cycles + 1,
        miss_above: cfg.l1d.hit_cycles,
    };
    cfg
}

/// Lines mapping to the same L1 and L2 set as `x`, enough to fill either.
pub fn eviction_set(cfg: &SimConfig, x: u64) -> Vec<u64> {
    let stride = (cfg.l2.sets.max(cfg.l1d.sets) as u64) * 64;
    let count = cfg.l1d.ways.max(cfg.l2.ways) as u64;
    (1..=count).map(|i| x + i * stride).collect()
}

struct Builder {
    steps: Vec<PhaseStep>,
}

impl Builder {
    fn push(&mut self, phase: Phase, thread: u32, events: Vec<TraceEvent>) {
        self.steps.push(PhaseStep {
            phase,
            thread,
            events,
        });
    }

    fn committed(&mut self, phase: Phase, thread: u32, w: u64, body: Vec<TraceEvent>) {
        let mut ev = vec![TraceEvent::open(w, thread)];
        ev.extend(body);
        ev.push(TraceEvent::Commit(WindowId(w)));
        self.push(phase, thread, ev);
    }
}

fn loads(addrs: &[u64], w: u64, t: u32) -> Vec<TraceEvent> {
    addrs.iter().map(|&a| TraceEvent::load(a, w, t)).collect()
}

pub fn gen_table1_scenario(line: u8, bit: u8) -> Result<Scenario> {
    gen_table1_scenario_for(&attack_config(Mode::Specbox), line, bit)
}

pub fn gen_table1_scenario_for(cfg: &SimConfig, line: u8, bit: u8) -> Result<Scenario> {
    if !(1..=6).contains(&line) {
        return Err(SimError::InvalidLine(line));
    }
    let x = TARGET;
    let ys = eviction_set(cfg, x);
    let send = bit != 0;
    let (a, b) = (0u32, 1u32);
    let mut sc = Builder { steps: Vec::new() };
    let gated = |evs: Vec<TraceEvent>| if send { evs } else { Vec::new() };
    let concurrent = line >= 4;
    match line {
        1 => {
            sc.committed(
                Phase::Prepare,
                a,
                1,
                vec![TraceEvent::mgmt(MgmtOp::Flush, x, 1, a)],
            );
            let mut ev = vec![TraceEvent::open(2, a)];
            ev.extend(gated(loads(&[x], 2, a)));
            ev.push(TraceEvent::Squash(WindowId(2)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Receive, a, vec![TraceEvent::measure(x, a)]);
        }
        2 => {
            sc.committed(Phase::Prepare, a, 1, loads(&[x], 1, a));
            let mut ev = vec![TraceEvent::open(2, a)];
            ev.extend(gated(loads(&ys, 2, a)));
            ev.push(TraceEvent::Squash(WindowId(2)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Receive, a, vec![TraceEvent::measure(x, a)]);
        }
        3 => {
            sc.committed(
                Phase::Prepare,
                a,
                1,
                vec![TraceEvent::mgmt(MgmtOp::Flush, x, 1, a)],
            );
            let mut prep = vec![TraceEvent::open(2, a)];
            prep.extend(loads(&[x], 2, a));
            sc.push(Phase::Prepare, a, prep);
            let mut ev = vec![TraceEvent::open(3, a)];
            ev.extend(gated(loads(&ys, 3, a)));
            ev.push(TraceEvent::Squash(WindowId(3)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Prepare, a, vec![TraceEvent::Commit(WindowId(2))]);
            sc.push(Phase::Receive, a, vec![TraceEvent::measure(x, a)]);
        }
        4 => {
            sc.committed(
                Phase::Prepare,
                b,
                1,
                vec![TraceEvent::mgmt(MgmtOp::Flush, x, 1, b)],
            );
            let mut ev = vec![TraceEvent::open(2, a)];
            ev.extend(gated(loads(&[x], 2, a)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Receive, b, vec![TraceEvent::measure(x, b)]);
            sc.push(Phase::Send, a, vec![TraceEvent::Squash(WindowId(2))]);
        }
        5 => {
            sc.committed(
                Phase::Prepare,
                b,
                1,
                vec![TraceEvent::mgmt(MgmtOp::Flush, x, 1, b)],
            );
            let mut prep = vec![TraceEvent::open(2, b)];
            prep.extend(loads(&[x], 2, b));
            sc.push(Phase::Prepare, b, prep);
            let mut ev = vec![TraceEvent::open(3, a)];
            ev.extend(gated(loads(&ys, 3, a)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Receive, b, vec![TraceEvent::measure(x, b)]);
            sc.push(Phase::Send, a, vec![TraceEvent::Squash(WindowId(3))]);
            sc.push(Phase::Prepare, b, vec![TraceEvent::Commit(WindowId(2))]);
        }
        _ => {
            sc.committed(Phase::Prepare, b, 1, loads(&[x], 1, b));
            let mut ev = vec![TraceEvent::open(2, a)];
            ev.extend(gated(loads(&ys, 2, a)));
            sc.push(Phase::Send, a, ev);
            sc.push(Phase::Receive, b, vec![TraceEvent::measure(x, b)]);
            sc.push(Phase::Send, a, vec![TraceEvent::Squash(WindowId(2))]);
        }
    }
    Ok(Scenario {
        name: format!("table1:{line}"),
        table_line: Some(line),
        secret_bit: bit,
        concurrent,
        steps: sc.steps,
    })
}

/// Receiver t2 on core 1 holds X exclusively; the sender on core 0
/// speculatively loads (`e2s`) or stores (`inval`) X; the receiver then
/// probes with a store (`e2s`) or a load (`inval`).
pub fn gen_coherence_scenario(kind: ScenarioKind, bit: u8) -> Result<Scenario> {
    let x = TARGET;
    let (a, r) = (0u32, 2u32);
    let (store_send, probe_store) = match kind {
        ScenarioKind::CoherenceE2S => (false, true),
        ScenarioKind::CoherenceInval => (true, false),
        other => return Err(SimError::UnknownScenario(other.name())),
    };
    let mut sc = Builder { steps: Vec::new() };
    sc.committed(Phase::Prepare, r, 1, loads(&[x], 1, r));
    let mut ev = vec![TraceEvent::open(2, a)];
    if bit != 0 {
        ev.push(if store_send {
            TraceEvent::store(x, 2, a)
        } else {
            TraceEvent::load(x, 2, a)
        });
    }
    ev.push(TraceEvent::Squash(WindowId(2)));
    sc.push(Phase::Send, a, ev);
    sc.push(
        Phase::Receive,
        r,
        vec![TraceEvent::Measure {
            addr: x,
            thread: crate::types::ThreadId(r),
            store: probe_store,
        }],
    );
    Ok(Scenario {
        name: kind.name(),
        table_line: None,
        secret_bit: bit,
        concurrent: false,
        steps: sc.steps,
    })
}

pub fn probe_addr(item: usize) -> u64 {
    PROBE_BASE + item as u64 * PROBE_STRIDE
}

/// Flush the probe array, touch `probe[secret]` in a squashed window, then
/// time every probe line; repeated `reps` times.
pub fn gen_spectre_poc(secret: u8, reps: usize) -> Vec<TraceEvent> {
    let t = 0u32;
    let mut ev = Vec::new();
    let mut w = 1u64;
    for _ in 0..reps {
        ev.push(TraceEvent::open(w, t));
        ev.extend((0..PROBE_ITEMS).map(|i| TraceEvent::mgmt(MgmtOp::Flush, probe_addr(i), w, t)));
        ev.push(TraceEvent::Commit(WindowId(w)));
        ev.push(TraceEvent::open(w + 1, t));
        ev.push(TraceEvent::load(probe_addr(secret as usize), w + 1, t));
        ev.push(TraceEvent::Squash(WindowId(w + 1)));
        ev.extend((0..PROBE_ITEMS).map(|i| TraceEvent::measure(probe_addr(i), t)));
        w += 2;
    }
    ev
}

/// Spectre runs use the default topology.
pub fn poc_config(mode: Mode) -> SimConfig {
    SimConfig::for_mode(mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub address: u64,
    pub class0: LatencyClass,
    pub class1: LatencyClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub leak: bool,
    pub evidence: Vec<Evidence>,
}

pub fn analyze(obs0: &[TimingObservation], obs1: &[TimingObservation]) -> Result<Verdict> {
    if obs0.is_empty() || obs1.is_empty() {
        return Err(SimError::MisalignedObservations(
            "empty observation list".into(),
        ));
    }
    if obs0.len() != obs1.len() {
        return Err(SimError::MisalignedObservations(format!(
            "{} vs {} observations",
            obs0.len(),
            obs1.len()
        )));
    }
    let mut evidence = Vec::new();
    for (i, (a, b)) in obs0.iter().zip(obs1).enumerate() {
        if a.address != b.address {
            return Err(SimError::MisalignedObservations(format!(
                "position {i}: {:#x} vs {:#x}",
                a.address, b.address
            )));
        }
        if a.class != b.class {
            evidence.push(Evidence {
                address: a.address,
                class0: a.class,
                class1: b.class,
            });
        }
    }
    Ok(Verdict {
        leak: !evidence.is_empty(),
        evidence,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioRun {
    pub secret: u8,
    pub observations: Vec<TimingObservation>,
    pub directory: Vec<(LineAddr, DirectoryEntry)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub verdict: Verdict,
    pub runs: [ScenarioRun; 2],
}

/// Secrets compared by the `poc` scenario.
pub const POC_SECRETS: [u8; 2] = [0, 79];

pub fn default_config(kind: ScenarioKind, mode: Mode) -> SimConfig {
    match kind {
        ScenarioKind::Table1(_) => attack_config(mode),
        ScenarioKind::CoherenceE2S | ScenarioKind::CoherenceInval => coherence_config(mode),
        ScenarioKind::Poc => poc_config(mode),
    }
}

pub fn scenario_trace(
    kind: ScenarioKind,
    cfg: &SimConfig,
    bit: u8,
    reps: usize,
) -> Result<Vec<TraceEvent>> {
    Ok(match kind {
        ScenarioKind::Table1(n) => gen_table1_scenario_for(cfg, n, bit)?.trace(),
        ScenarioKind::CoherenceE2S | ScenarioKind::CoherenceInval => {
            gen_coherence_scenario(kind, bit)?.trace()
        }
        ScenarioKind::Poc => gen_spectre_poc(POC_SECRETS[bit as usize], reps),
    })
}

pub fn run_trace(events: &[TraceEvent], cfg: &SimConfig, secret: u8) -> Result<ScenarioRun> {
    let mut sim = Simulator::new(cfg.clone())?;
    sim.run(events)?;
    Ok(ScenarioRun {
        secret,
        observations: sim.observations().to_vec(),
        directory: sim
            .directory()
            .entries()
            .iter()
            .map(|(k, v)| (*k, *v))
            .collect(),
    })
}

/// Runs both secret values of a scenario and compares the receiver's view.
pub fn run_scenario_with(
    kind: ScenarioKind,
    cfg: &SimConfig,
    reps: usize,
) -> Result<ScenarioOutcome> {
    let mut runs = Vec::with_capacity(2);
    for bit in [0u8, 1] {
        let trace = scenario_trace(kind, cfg, bit, reps)?;
        let secret = if kind == ScenarioKind::Poc {
            POC_SECRETS[bit as usize]
        } else {
            bit
        };
        runs.push(run_trace(&trace, cfg, secret)?);
    }
    let verdict = analyze(&runs[0].observations, &runs[1].observations)?;
    let [r0, r1]: [ScenarioRun; 2] = runs.try_into().expect("two runs");
    Ok(ScenarioOutcome {
        scenario: kind.name(),
        verdict,
        runs: [r0, r1],
    })
}

pub fn run_scenario(name: &str, mode: Mode) -> Result<ScenarioOutcome> {
    let kind: ScenarioKind = name.parse()?;
    run_scenario_with(kind, &default_config(kind, mode), 1)
}

/// Per-item classification of a PoC run, one row per repetition.
pub fn poc_classes(obs: &[TimingObservation]) -> Vec<Vec<LatencyClass>> {
    obs.chunks(PROBE_ITEMS)
        .map(|c| c.iter().map(|o| o.class).collect())
        .collect()
}

#[derive(Serialize)]
struct PocRow {
    rep: usize,
    item: usize,
    address: String,
    latency: u64,
    class: LatencyClass,
}

pub fn poc_csv(obs: &[TimingObservation]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, o) in obs.iter().enumerate() {
        w.serialize(PocRow {
            rep: i / PROBE_ITEMS,
            item: i % PROBE_ITEMS,
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
