//! `run`: one deterministic scenario run with its assertions.

use std::io::Write;
use std::path::{Path, PathBuf};

use stepwise_core::{EventLog, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_PARSE: i32 = 2;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub ticks: Option<u64>,
    pub log: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Runs the scenario at `path`, writes the summary table to `out` and
/// returns the process exit code.
pub fn run_scenario(path: &Path, options: &RunOptions, out: &mut impl Write) -> i32 {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return EXIT_PARSE;
        }
    };
    let run = match scenario.run(options.ticks, options.seed) {
        Ok(r) => r,
        Err(err) => {
            // A scenario that parses but cannot be set up (unknown skill,
            // duplicate agent) is still a malformed input.
            let _ = writeln!(out, "error: {err}");
            return EXIT_PARSE;
        }
    };
    let log = run.event_log();
    if let Some(log_path) = &options.log {
        if let Err(err) = std::fs::write(log_path, EventLog::to_jsonl(log.events())) {
            let _ = writeln!(out, "error: cannot write {}: {err}", log_path.display());
            return EXIT_PARSE;
        }
    }

    let s = &run.summary;
    let _ = writeln!(out, "scenario  {}", scenario.name);
    let _ = writeln!(
        out,
        "status    {:?} after {} rounds, {} actions, {} events",
        s.status,
        s.rounds,
        s.actions,
        log.len()
    );
    for r in &run.results {
        let label = serde_json::to_value(&r.assertion)
            .ok()
            .and_then(|v| v.get("kind").and_then(|k| k.as_str().map(str::to_string)))
            .unwrap_or_default();
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict}      {label:<26} {}", r.detail);
    }
    if run.passed() {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}
