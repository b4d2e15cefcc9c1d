use std::path::PathBuf;

use stepwise_core::audit;
use stepwise_core::event::EventLog;
use stepwise_core::{RunStatus, Scenario};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_dir().join(format!("{name}.json"))).unwrap()
}

fn check(name: &str) {
    let run = scenario(name).run(None, None).unwrap();
    if !run.passed() || run.summary.status != RunStatus::Completed {
        eprintln!("{}", EventLog::to_jsonl(run.event_log().events()));
        eprintln!("{:#?}\n{:#?}", run.summary, run.results);
    }
    assert_eq!(run.summary.status, RunStatus::Completed, "{name}");
    assert!(run.passed(), "{name}");
}

#[test]
fn two_agent_handoff() {
    check("two_agent_handoff");
}

#[test]
fn broadcast_wait() {
    check("broadcast_wait");
}

#[test]
fn one_way_notes() {
    check("one_way_notes");
}

#[test]
fn dynamic_agent() {
    check("dynamic_agent");
}

#[test]
fn parallel_tasks() {
    check("parallel_tasks");
}

#[test]
fn every_bundled_scenario_parses() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::load(&path).unwrap();
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn every_bundled_log_passes_the_audit() {
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let run = Scenario::load(&path).unwrap().run(None, None).unwrap();
        let log = run.event_log();
        for (check, violations) in audit::all(log.events()) {
            assert!(violations.is_empty(), "{}: {check}: {violations:#?}", path.display());
        }
    }
}

#[test]
fn handoff_exercises_every_audited_path() {
    let run = scenario("two_agent_handoff").run(None, None).unwrap();
    let log = run.event_log();
    let types: Vec<&str> = log.events().iter().map(|e| e.kind.type_name()).collect();
    for needed in ["lock_acquired", "lock_released", "stage_started", "tool_call", "message_delivered"] {
        assert!(types.contains(&needed), "missing {needed}");
    }
}
