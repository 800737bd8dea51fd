use std::path::PathBuf;
use std::process::{Command, Output};

fn specsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn repo_file(rel: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel);
    root.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn poc_baseline_hits_only_the_secret_item() {
    let out = specsim(&["poc", "--secret", "79", "--mode", "baseline"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rep,item,address,latency,class"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 100 * 256);
    for r in &rows {
        let want = if r[1] == "79" { "Hit" } else { "Miss" };
        assert_eq!(r[4], want, "{r:?}");
    }
}

#[test]
fn poc_protected_is_all_misses_and_secret_independent() {
    let a = specsim(&["poc", "--secret", "3", "--mode", "specbox", "--reps", "5"]);
    let b = specsim(&["poc", "--secret", "200", "--mode", "specbox", "--reps", "5"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).lines().skip(1).all(|l| l.ends_with(",Miss")));
}

#[test]
fn csv_output_is_byte_stable() {
    let args = ["poc", "--secret", "42", "--mode", "baseline", "--reps", "3"];
    assert_eq!(specsim(&args).stdout, specsim(&args).stdout);
    let trace = repo_file("traces/demo.trace");
    let args = ["run", "--trace", trace.as_str(), "--format", "csv"];
    assert_eq!(specsim(&args).stdout, specsim(&args).stdout);
}

#[test]
fn attack_verdicts_and_exit_codes() {
    let out = specsim(&["attack", "--scenario", "table1:5", "--mode", "specbox"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["verdict"]["leak"], false);

    let out = specsim(&[
        "attack",
        "--scenario",
        "coherence:inval",
        "--mode",
        "baseline",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["verdict"]["leak"], true);
}

#[test]
fn unexpected_outcome_exits_with_two() {
    let dir = std::env::temp_dir().join(format!("specsim-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("no-delay.toml");
    std::fs::write(&cfg, "coherence_delay = false\ncores = 2\nsmt = 2\n\n[thresholds]\nhit_below = 2\nmiss_above = 1\n").unwrap();
    let out = specsim(&[
        "attack",
        "--scenario",
        "coherence:e2s",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn replay_reports_six_matching_steps() {
    let out = specsim(&["replay-fig2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let steps = doc["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 6);
    assert!(steps.iter().all(|s| s["matches"] == true));
}

#[test]
fn run_writes_report_to_file() {
    let dir = std::env::temp_dir().join(format!("specsim-run-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let dest = dir.join("report.json");
    let trace = repo_file("traces/demo.trace");
    let config = repo_file("configs/small-smt.toml");
    let out = specsim(&[
        "run",
        "--trace",
        &trace,
        "--config",
        &config,
        "--out",
        dest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(doc["windows_squashed"], 1);
    assert_eq!(doc["observations"].as_array().unwrap().len(), 4);
}

#[test]
fn parse_and_config_errors_exit_with_one() {
    let dir = std::env::temp_dir().join(format!("specsim-err-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad_trace = dir.join("bad.trace");
    std::fs::write(&bad_trace, "OPEN w1 t0\nJUMP 0x10 w1 t0\n").unwrap();
    let out = specsim(&["run", "--trace", bad_trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let bad_cfg = dir.join("bad.toml");
    std::fs::write(&bad_cfg, "cores = 0\n").unwrap();
    let out = specsim(&["poc", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(
        specsim(&["attack", "--scenario", "table1:9"]).status.code(),
        Some(1)
    );
    assert_eq!(specsim(&["poc", "--secret", "300"]).status.code(), Some(1));
    assert_eq!(specsim(&[]).status.code(), Some(1));
}

#[test]
fn sweep_covers_both_levels() {
    let out = specsim(&["sweep", "--windows", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("l1d,")).count(), 8);
    assert_eq!(text.lines().filter(|l| l.starts_with("l2,")).count(), 16);
}
