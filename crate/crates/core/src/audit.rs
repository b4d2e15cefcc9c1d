//! Property checks over a finished event log.
//!
//! Each check returns human-readable violations; an empty list means the log
//! satisfies the property. They read only the log, never live state, so they
//! work on replayed or loaded logs as well.

use std::collections::{BTreeMap, BTreeSet};

use crate::event::{Event, EventKind};
use crate::ids::HUMAN_OPERATOR;
use crate::messaging::MessageKind;
use crate::skills::SkillKind;

/// Every check, labelled.
pub fn all(events: &[Event]) -> Vec<(&'static str, Vec<String>)> {
    vec![
        ("stage_sequencing", stage_overlaps(events)),
        ("message_branching", branching_violations(events)),
        ("step_locks", lock_violations(events)),
        ("long_tail", long_tail_violations(events)),
        ("step_origins", origin_violations(events)),
    ]
}

/// Stages of one task must run one at a time, in the order they were added.
pub fn stage_overlaps(events: &[Event]) -> Vec<String> {
    let mut added: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut running: BTreeMap<&str, &str> = BTreeMap::new();
    let mut started: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::StageAdded { task_id, stage_id, .. } => added.entry(task_id).or_default().push(stage_id),
            EventKind::StageStarted { task_id, stage_id } => {
                if let Some(open) = running.insert(task_id, stage_id) {
                    out.push(format!("seq {}: {stage_id} started while {open} was running", e.seq));
                }
                started.entry(task_id).or_default().push(stage_id);
            }
            EventKind::StageFinished { task_id, stage_id, .. } => {
                if running.get(task_id.as_str()) == Some(&stage_id.as_str()) {
                    running.remove(task_id.as_str());
                }
            }
            EventKind::TaskFinished { task_id, .. } | EventKind::TaskCleared { task_id } => {
                running.remove(task_id.as_str());
            }
            _ => {}
        }
    }
    for (task, order) in started {
        let expected = added.get(task).map(Vec::as_slice).unwrap_or_default();
        if !expected.starts_with(&order) {
            out.push(format!("{task}: stages started as {order:?}, added as {expected:?}"));
        }
    }
    out
}

/// Deliveries create the receiver-side step the message kind calls for.
pub fn branching_violations(events: &[Event]) -> Vec<String> {
    let mut out = Vec::new();
    for e in events {
        let EventKind::MessageDelivered {
            message_id,
            receiver_id,
            kind,
            need_reply,
            step_executor,
            ..
        } = &e.kind
        else {
            continue;
        };
        if receiver_id == HUMAN_OPERATOR {
            continue;
        }
        let want = match kind {
            MessageKind::ToolResult => "tool_decision",
            _ if *need_reply => "send_message",
            _ => "process_message",
        };
        if step_executor.as_deref() != Some(want) {
            out.push(format!(
                "seq {}: {message_id} to {receiver_id} produced {step_executor:?}, expected {want}",
                e.seq
            ));
        }
    }
    out
}

/// An agent holding wait ids runs nothing until the last one is released.
///
/// The action that sent the waiting message is logged after its own lock
/// acquisition, so the first action of the agent after `LockAcquired` is
/// the sender itself and is allowed.
pub fn lock_violations(events: &[Event]) -> Vec<String> {
    let mut held: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut sender_pending: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::LockAcquired { agent_id, wait_ids } => {
                held.entry(agent_id).or_default().extend(wait_ids.iter().map(String::as_str));
                sender_pending.insert(agent_id);
            }
            EventKind::LockReleased { agent_id, wait_id, .. } => {
                if let Some(set) = held.get_mut(agent_id.as_str()) {
                    set.remove(wait_id.as_str());
                }
            }
            EventKind::Action(a) => {
                if sender_pending.remove(a.agent_id.as_str()) {
                    continue;
                }
                if let Some(set) = held.get(a.agent_id.as_str()).filter(|s| !s.is_empty()) {
                    out.push(format!(
                        "seq {}: {} ran {} ({}) while waiting on {set:?}",
                        e.seq, a.agent_id, a.step_id, a.executor
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tail {
    Closed,
    Generated,
    Called,
    Continued,
}

/// Tool use follows `instruction_generation -> tool -> tool_decision`,
/// repeated while the decision is `continue`, and ends on `stop`.
///
/// Only the three executors involved are considered, per agent, so
/// unrelated steps interleaved by message handling do not count.
pub fn long_tail_violations(events: &[Event]) -> Vec<String> {
    let mut state: BTreeMap<&str, Tail> = BTreeMap::new();
    let mut out = Vec::new();
    for e in events {
        let EventKind::Action(a) = &e.kind else { continue };
        let tail = state.entry(a.agent_id.as_str()).or_insert(Tail::Closed);
        let next = match (SkillKind::parse(&a.executor), *tail) {
            (Some(SkillKind::InstructionGeneration), Tail::Closed | Tail::Continued) => Some(Tail::Generated),
            (None, Tail::Generated) => Some(Tail::Called),
            (Some(SkillKind::ToolDecision), Tail::Called) => match a.decision.as_deref() {
                Some("continue") => Some(Tail::Continued),
                Some("stop") => Some(Tail::Closed),
                _ => None,
            },
            (Some(SkillKind::InstructionGeneration | SkillKind::ToolDecision) | None, _) => None,
            (Some(_), _) => continue,
        };
        match next {
            Some(n) => *tail = n,
            None => {
                out.push(format!(
                    "seq {}: {} ran {} ({:?}) after {:?}",
                    e.seq, a.agent_id, a.executor, a.decision, tail
                ));
                *tail = Tail::Closed;
            }
        }
    }
    for (agent, tail) in state {
        if tail != Tail::Closed {
            out.push(format!("{agent}: tool interaction left open ({tail:?})"));
        }
    }
    out
}

/// Summary steps only come from reflection, tool decisions only from tool
/// results.
pub fn origin_violations(events: &[Event]) -> Vec<String> {
    let mut out = Vec::new();
    for e in events {
        let EventKind::StepAdded {
            step_id,
            executor,
            cause,
            ..
        } = &e.kind
        else {
            continue;
        };
        let ok = match executor.as_str() {
            "summary" => cause.starts_with("reflection "),
            "tool_decision" => cause.starts_with("message "),
            _ => true,
        };
        if !ok {
            out.push(format!("seq {}: {executor} {step_id} added by `{cause}`", e.seq));
        }
    }
    out
}
