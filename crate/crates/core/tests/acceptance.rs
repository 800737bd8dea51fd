mod common;

use std::time::{Duration, Instant};

use common::{lru_op, lru_oracle_check, random_trace, rng, small_config, FuzzParams, PairTemplate};
use rand::Rng;
use specsim_core::attacks::{
    coherence_config, gen_coherence_scenario, gen_spectre_poc, poc_classes, poc_config,
    run_scenario, run_scenario_with, run_trace, Phase, ScenarioKind, PROBE_ITEMS,
};
use specsim_core::fig2::replay_fig2;
use specsim_core::report::LatencyClass;
use specsim_core::trace::TraceEvent;
use specsim_core::types::LevelKind;
use specsim_core::{Mode, Simulator};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion1() -> Outcome {
    let replay = replay_fig2();
    for s in &replay.steps {
        check(s.matches, || {
            format!("step {} ({}) diverged", s.step, s.action)
        })?;
    }
    check(replay.all_match(), || "replay mismatch".into())?;
    Ok(format!(
        "{} steps match, {} reinstall",
        replay.steps.len(),
        replay.rsr_reinstalls
    ))
}

fn criterion2() -> Outcome {
    const REPS: usize = 100;
    let limit = Duration::from_secs(5);

    let t = Instant::now();
    let base = run_trace(&gen_spectre_poc(79, REPS), &poc_config(Mode::Baseline), 79)
        .map_err(|e| e.to_string())?;
    check(t.elapsed() < limit, || {
        format!("baseline run took {:?}", t.elapsed())
    })?;
    let rows = poc_classes(&base.observations);
    check(rows.len() == REPS, || {
        format!("{} repetitions observed", rows.len())
    })?;
    for (rep, row) in rows.iter().enumerate() {
        for (i, c) in row.iter().enumerate() {
            let want = if i == 79 {
                LatencyClass::Hit
            } else {
                LatencyClass::Miss
            };
            check(*c == want, || format!("baseline rep {rep} item {i}: {c:?}"))?;
        }
    }
    for o in base
        .observations
        .iter()
        .filter(|o| o.class == LatencyClass::Miss)
    {
        check(o.latency > 150, || {
            format!("miss latency {} not above 150", o.latency)
        })?;
    }

    let mut protected = Vec::new();
    for secret in [0u8, 79, 255, 1] {
        let t = Instant::now();
        let run = run_trace(
            &gen_spectre_poc(secret, REPS),
            &poc_config(Mode::Specbox),
            secret,
        )
        .map_err(|e| e.to_string())?;
        check(t.elapsed() < limit, || {
            format!("protected run took {:?}", t.elapsed())
        })?;
        check(run.observations.len() == REPS * PROBE_ITEMS, || {
            "observation count".into()
        })?;
        check(
            run.observations
                .iter()
                .all(|o| o.class == LatencyClass::Miss),
            || format!("secret {secret}: some item not a miss"),
        )?;
        protected.push(run.observations);
    }
    for p in &protected[1..] {
        check(*p == protected[0], || {
            "protected observation vectors differ".into()
        })?;
    }
    Ok(format!(
        "baseline leaks item 79 in {REPS}/{REPS} reps, protected vectors identical for 4 secrets"
    ))
}

fn criterion3() -> Outcome {
    for line in 1..=6 {
        let name = format!("table1:{line}");
        let base = run_scenario(&name, Mode::Baseline).map_err(|e| e.to_string())?;
        let sbox = run_scenario(&name, Mode::Specbox).map_err(|e| e.to_string())?;
        check(base.verdict.leak, || {
            format!("{name}: no leak without protection")
        })?;
        check(!sbox.verdict.leak, || {
            format!("{name}: leak with protection {:?}", sbox.verdict.evidence)
        })?;
    }
    Ok("6 variants: leak unprotected, none protected".into())
}

fn criterion4() -> Outcome {
    for kind in [ScenarioKind::CoherenceE2S, ScenarioKind::CoherenceInval] {
        let plain = run_scenario_with(kind, &coherence_config(Mode::Baseline), 1)
            .map_err(|e| e.to_string())?;
        check(plain.verdict.leak, || {
            format!("{kind:?}: plain coherence does not leak")
        })?;
        let full = run_scenario_with(kind, &coherence_config(Mode::Specbox), 1)
            .map_err(|e| e.to_string())?;
        check(!full.verdict.leak, || {
            format!("{kind:?}: delayed coherence leaks")
        })?;
        check(full.runs[0].directory == full.runs[1].directory, || {
            format!("{kind:?}: final directory differs")
        })?;

        let cfg = coherence_config(Mode::Specbox);
        let without_receive = |bit| -> Result<Vec<TraceEvent>, String> {
            let sc = gen_coherence_scenario(kind, bit).map_err(|e| e.to_string())?;
            Ok(sc
                .steps
                .into_iter()
                .filter(|s| s.phase != Phase::Receive)
                .flat_map(|s| s.events)
                .collect())
        };
        let with = run_trace(&without_receive(1)?, &cfg, 1).map_err(|e| e.to_string())?;
        let without = run_trace(&without_receive(0)?, &cfg, 0).map_err(|e| e.to_string())?;
        check(with.directory == without.directory, || {
            format!(
                "{kind:?}: directory after squash {:?} vs {:?}",
                with.directory, without.directory
            )
        })?;
    }
    Ok("E->S and invalidation: plain leaks, delayed hides, directory identical".into())
}

fn observations_of(events: &[TraceEvent], mode: Mode) -> Result<Vec<(u64, u64)>, String> {
    let mut sim = Simulator::new(small_config(mode, 2, 1)).map_err(|e| e.to_string())?;
    sim.run(events).map_err(|e| e.to_string())?;
    Ok(sim
        .observations()
        .iter()
        .map(|o| (o.address, o.latency))
        .collect())
}

fn criterion5() -> Outcome {
    const PAIRS: usize = 1000;
    let params = FuzzParams {
        threads: 2,
        lines: 64,
        steps: 120,
        max_open: 3,
    };
    let mut r = rng(0x5eed_0005);
    let mut tested = 0;
    let mut baseline_divergence = None;
    while tested < PAIRS {
        let template = PairTemplate::generate(&mut r, &params);
        if !template.has_free_slots() {
            continue;
        }
        let a = template.instantiate(&mut r, params.lines);
        let b = template.instantiate(&mut r, params.lines);
        let oa = observations_of(&a, Mode::Specbox)?;
        let ob = observations_of(&b, Mode::Specbox)?;
        if oa != ob {
            let at = oa.iter().zip(&ob).position(|(x, y)| x != y);
            return Err(format!(
                "pair {tested} diverges at observation {at:?}\n{a:?}\n{b:?}"
            ));
        }
        if baseline_divergence.is_none()
            && observations_of(&a, Mode::Baseline)? != observations_of(&b, Mode::Baseline)?
        {
            baseline_divergence = Some(tested);
        }
        tested += 1;
    }
    let first = baseline_divergence.ok_or("baseline never diverged")?;
    Ok(format!(
        "{tested} pairs identical, baseline diverges at pair {first}"
    ))
}

fn criterion6() -> Outcome {
    const TARGET_EVENTS: usize = 100_000;
    let cfg = small_config(Mode::Specbox, 2, 2);
    let mut r = rng(0x5eed_0006);
    let mut events = 0usize;
    let mut traces = 0usize;
    while events < TARGET_EVENTS {
        let steps = r.gen_range(200..600);
        let trace = random_trace(&mut r, 4, 96, steps);
        let mut sim = Simulator::new(cfg.clone()).map_err(|e| e.to_string())?;
        for (i, ev) in trace.iter().enumerate() {
            let speculative = matches!(
                ev,
                TraceEvent::Access { window, .. }
                    | TraceEvent::TlbMissLoad { window, .. }
                    | TraceEvent::Mgmt { window, .. } if !window.is_internal()
            );
            let before = speculative.then(|| sim.persistent_snapshot());
            sim.step(ev)
                .map_err(|e| format!("trace {traces} event {i}: {e}"))?;
            sim.check_invariants()
                .map_err(|e| format!("trace {traces} event {i} ({ev}): {e}"))?;
            if let Some(before) = before {
                check(before == sim.persistent_snapshot(), || {
                    format!("trace {traces} event {i} ({ev}) changed the persistent domain")
                })?;
            }
        }
        events += trace.len();
        traces += 1;
    }
    Ok(format!("{events} events over {traces} traces"))
}

fn criterion7() -> Outcome {
    const TRACES: usize = 100;
    let mut r = rng(0x5eed_0007);
    for n in 0..TRACES {
        let trace = random_trace(&mut r, 1, 96, 400);
        let mut on_cfg = small_config(Mode::Specbox, 1, 1);
        on_cfg.tos = true;
        on_cfg.tos_levels = Some(vec![LevelKind::L1i, LevelKind::L1d, LevelKind::L2]);
        let mut off_cfg = on_cfg.clone();
        off_cfg.tos = false;
        off_cfg.tos_levels = None;

        let mut on = Simulator::new(on_cfg).map_err(|e| e.to_string())?;
        let mut off = Simulator::new(off_cfg).map_err(|e| e.to_string())?;
        on.run(&trace).map_err(|e| e.to_string())?;
        off.run(&trace).map_err(|e| e.to_string())?;
        check(on.report() == off.report(), || {
            format!("trace {n}: reports differ")
        })?;
        for (a, b) in on.caches().zip(off.caches()) {
            check(a.sets() == b.sets(), || {
                format!("trace {n}: {} contents differ", a.geometry.level)
            })?;
        }
    }
    Ok(format!(
        "{TRACES} single-thread traces identical with and without ownership tracking"
    ))
}

fn criterion8() -> Outcome {
    const CASES: usize = 10_000;
    let mut r = rng(0x5eed_0008);
    let mut checks = 0;
    for _ in 0..CASES {
        let len = r.gen_range(0..=32);
        let ops: Vec<_> = (0..len).map(|_| lru_op(r.gen(), r.gen())).collect();
        checks += lru_oracle_check(&ops)?;
    }
    Ok(format!("{CASES} histories, {checks} victim choices agree"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "1 two-domain set replay",
            criterion1,
            Duration::from_secs(1),
        ),
        ("2 bounds-check gadget", criterion2, Duration::from_secs(20)),
        (
            "3 single-thread attack variants",
            criterion3,
            Duration::from_secs(1),
        ),
        ("4 coherence channels", criterion4, Duration::from_secs(1)),
        ("5 squash invisibility", criterion5, Duration::from_secs(60)),
        (
            "6 structural invariants",
            criterion6,
            Duration::from_secs(60),
        ),
        (
            "7 ownership tracking is inert",
            criterion7,
            Duration::from_secs(10),
        ),
        ("8 recency oracle", criterion8, Duration::from_secs(30)),
    ];
    let mut failed = Vec::new();
    for (name, f, limit) in criteria {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed <= limit {
                Ok(d)
            } else {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            }
        });
        match &result {
            Ok(detail) => println!(
                "criterion {name}: PASS ({} ms) {detail}",
                elapsed.as_millis()
            ),
            Err(why) => {
                println!("criterion {name}: FAIL ({} ms) {why}", elapsed.as_millis());
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
