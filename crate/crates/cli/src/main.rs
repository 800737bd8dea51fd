use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use specsim_core::attacks::{
    default_config, gen_spectre_poc, poc_classes, poc_config, poc_csv, run_scenario_with,
    run_trace, ScenarioKind,
};
use specsim_core::fig2::replay_fig2;
use specsim_core::report::LatencyClass;
use specsim_core::types::LevelKind;
use specsim_core::workload::{sweep, sweep_csv, RsrWorkload};
use specsim_core::{parse_trace, Mode, SimConfig, Simulator};

#[derive(Parser)]
#[command(
    name = "specsim",
    version,
    about = "Trace-driven cache simulator with speculative domain isolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults to the built-in hierarchy.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Document,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a trace file and report counters and observations.
    Run {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run a named attack scenario for both secret values.
    Attack {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Bounds-check-bypass gadget with a 256-entry probe array.
    Poc {
        #[arg(long, default_value_t = 79)]
        secret: u8,
        #[arg(long, default_value_t = 100)]
        reps: usize,
    },
    /// Replay the six-step state-migration walkthrough and check each step.
    ReplayFig2,
    /// Vary the temporary way budget and report miss counters.
    Sweep {
        #[arg(long, default_value_t = 2000)]
        windows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Output text plus whether the outcome matched expectations.
struct Outcome {
    text: String,
    expected: bool,
}

fn load_config(cli: &Cli, fallback: SimConfig) -> Result<SimConfig> {
    let cfg = match &cli.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SimConfig::from_toml(&text).with_context(|| format!("loading {}", path.display()))?
        }
        None => fallback,
    };
    Ok(match cli.mode {
        Some(m) => cfg.with_mode(m),
        None => cfg,
    })
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn mode_of(cfg: &SimConfig) -> Mode {
    if cfg.clone().normalized().baseline {
        Mode::Baseline
    } else {
        Mode::Specbox
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let mode = cli.mode.unwrap_or(Mode::Specbox);
    match &cli.command {
        Command::Run { trace } => {
            let cfg = load_config(cli, SimConfig::for_mode(mode))?;
            let text = fs::read_to_string(trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let events = parse_trace(&text)?;
            let mut sim = Simulator::new(cfg)?;
            sim.run(&events)?;
            let report = sim.report();
            let text = match cli.format.unwrap_or(Format::Document) {
                Format::Document => report.to_json() + "\n",
                Format::Csv => report.observations_csv()?,
            };
            Ok(Outcome {
                text,
                expected: true,
            })
        }
        Command::Attack { scenario, reps } => {
            let kind: ScenarioKind = scenario.parse()?;
            let cfg = load_config(cli, default_config(kind, mode))?;
            let outcome = run_scenario_with(kind, &cfg, *reps)?;
            let expect_leak = mode_of(&cfg) == Mode::Baseline;
            let text = match cli.format.unwrap_or(Format::Document) {
                Format::Document => json(&outcome)?,
                Format::Csv => {
                    let mut s = String::from("scenario,leak,evidence\n");
                    s += &format!(
                        "{},{},{}\n",
                        outcome.scenario,
                        outcome.verdict.leak,
                        outcome.verdict.evidence.len()
                    );
                    s
                }
            };
            Ok(Outcome {
                text,
                expected: outcome.verdict.leak == expect_leak,
            })
        }
        Command::Poc { secret, reps } => {
            let cfg = load_config(cli, poc_config(mode))?;
            let run = run_trace(&gen_spectre_poc(*secret, *reps), &cfg, *secret)?;
            let rows = poc_classes(&run.observations);
            let leaky = mode_of(&cfg) == Mode::Baseline;
            let expected = rows.iter().all(|row| {
                row.iter().enumerate().all(|(i, c)| {
                    let want = if leaky && i == *secret as usize {
                        LatencyClass::Hit
                    } else {
                        LatencyClass::Miss
                    };
                    *c == want
                })
            });
            let text = match cli.format.unwrap_or(Format::Csv) {
                Format::Csv => poc_csv(&run.observations)?,
                Format::Document => json(&run)?,
            };
            Ok(Outcome { text, expected })
        }
        Command::ReplayFig2 => {
            let replay = replay_fig2();
            let text = match cli.format.unwrap_or(Format::Document) {
                Format::Document => json(&replay)?,
                Format::Csv => {
                    let mut s = String::from("step,action,temporary,persistent,matches\n");
                    for st in &replay.steps {
                        s += &format!(
                            "{},{},{},{},{}\n",
                            st.step,
                            st.action,
                            st.actual.temporary.join(" "),
                            st.actual.persistent.join(" "),
                            st.matches
                        );
                    }
                    s
                }
            };
            Ok(Outcome {
                text,
                expected: replay.all_match(),
            })
        }
        Command::Sweep { windows, seed } => {
            let cfg = load_config(cli, SimConfig::for_mode(mode))?;
            if mode_of(&cfg) == Mode::Baseline {
                bail!("sweep needs a partitioned configuration");
            }
            let workload = RsrWorkload {
                seed: *seed,
                windows: *windows,
                ..RsrWorkload::default()
            };
            let mut points = sweep(&cfg, LevelKind::L1d, &workload)?;
            points.extend(sweep(&cfg, LevelKind::L2, &workload)?);
            let text = match cli.format.unwrap_or(Format::Csv) {
                Format::Csv => sweep_csv(&points)?,
                Format::Document => json(&points)?,
            };
            Ok(Outcome {
                text,
                expected: true,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let written = match &cli.out {
        Some(path) => {
            fs::write(path, &outcome.text).with_context(|| format!("writing {}", path.display()))
        }
        None => match std::io::stdout().lock().write_all(outcome.text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        },
    };
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if outcome.expected {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected outcome for the selected mode");
        ExitCode::from(2)
    }
}
