//! Offline queries over a JSON-lines event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use stepwise_core::event::{Event, EventKind};
use stepwise_core::StepStatus;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Query {
    pub agent: Option<String>,
    pub task: Option<String>,
    pub executor: Option<String>,
}

impl Query {
    pub fn validate(&self) -> Result<(), String> {
        for (flag, value) in [("--agent", &self.agent), ("--task", &self.task), ("--executor", &self.executor)] {
            if value.as_deref().is_some_and(|v| v.trim().is_empty()) {
                return Err(format!("{flag} needs a non-empty value"));
            }
        }
        Ok(())
    }

    pub fn matches(&self, event: &Event) -> bool {
        let kind = &event.kind;
        if self.agent.as_deref().is_some_and(|a| kind.agent() != Some(a)) {
            return false;
        }
        if self.task.as_deref().is_some_and(|t| kind.task() != Some(t)) {
            return false;
        }
        if let Some(want) = self.executor.as_deref() {
            let executor = match kind {
                EventKind::Action(a) => Some(a.executor.as_str()),
                EventKind::StepAdded { executor, .. } => Some(executor.as_str()),
                EventKind::MessageDelivered { step_executor, .. } => step_executor.as_deref(),
                _ => None,
            };
            if executor != Some(want) {
                return false;
            }
        }
        true
    }
}

pub fn filter<'a>(events: &'a [Event], query: &Query) -> Vec<&'a Event> {
    events.iter().filter(|e| query.matches(e)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageSteps {
    pub finished: usize,
    pub failed: usize,
}

impl StageSteps {
    pub fn total(&self) -> usize {
        self.finished + self.failed
    }
}

/// One stretch during which an agent held at least one wait id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LockWait {
    pub agent_id: String,
    pub wait_ids: Vec<String>,
    pub acquired_tick: u64,
    /// `None` when the log ends with the lock still held.
    pub released_tick: Option<u64>,
}

impl LockWait {
    pub fn ticks(&self) -> Option<u64> {
        self.released_tick.map(|r| r - self.acquired_tick)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    /// Executed steps per (task, stage), `no_stage` included.
    pub stage_steps: BTreeMap<(String, String), StageSteps>,
    pub lock_waits: Vec<LockWait>,
}

pub fn stats<'a>(events: impl IntoIterator<Item = &'a Event>) -> Stats {
    let mut out = Stats::default();
    let mut open: BTreeMap<String, (LockWait, BTreeSet<String>)> = BTreeMap::new();
    for e in events {
        match &e.kind {
            EventKind::Action(a) => {
                let entry = out
                    .stage_steps
                    .entry((a.task_id.clone(), a.stage_id.clone()))
                    .or_default();
                if a.status == StepStatus::Failed {
                    entry.failed += 1;
                } else {
                    entry.finished += 1;
                }
            }
            EventKind::LockAcquired { agent_id, wait_ids } => {
                let (wait, held) = open.entry(agent_id.clone()).or_insert_with(|| {
                    (
                        LockWait {
                            agent_id: agent_id.clone(),
                            wait_ids: Vec::new(),
                            acquired_tick: e.tick,
                            released_tick: None,
                        },
                        BTreeSet::new(),
                    )
                });
                wait.wait_ids.extend(wait_ids.iter().cloned());
                held.extend(wait_ids.iter().cloned());
            }
            EventKind::LockReleased { agent_id, wait_id, .. } => {
                let done = match open.get_mut(agent_id) {
                    Some((_, held)) => {
                        held.remove(wait_id);
                        held.is_empty()
                    }
                    None => false,
                };
                if done {
                    let (mut wait, _) = open.remove(agent_id).expect("present");
                    wait.released_tick = Some(e.tick);
                    out.lock_waits.push(wait);
                }
            }
            _ => {}
        }
    }
    out.lock_waits.extend(open.into_values().map(|(w, _)| w));
    out
}

pub fn render_events(events: &[&Event]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", serde_json::to_string(e).expect("event serializes"));
    }
    out
}

pub fn render_stats(stats: &Stats) -> String {
    let mut out = String::new();
    for ((task, stage), steps) in &stats.stage_steps {
        let _ = writeln!(
            out,
            "steps  {task:<8} {stage:<10} {:>4}  ({} finished, {} failed)",
            steps.total(),
            steps.finished,
            steps.failed
        );
    }
    for w in &stats.lock_waits {
        let span = match w.ticks() {
            Some(t) => format!("{t} ticks"),
            None => "still held".into(),
        };
        let _ = writeln!(
            out,
            "lock   {:<8} {}  from tick {}: {span}",
            w.agent_id,
            w.wait_ids.join(","),
            w.acquired_tick
        );
    }
    out
}
