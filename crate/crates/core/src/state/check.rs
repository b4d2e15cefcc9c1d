//! Cross-reference integrity of the four-tier hierarchy.
//!
//! Task, stage and agent reference each other in both directions. Steps
//! point one way at their task, stage and agent, and are referenced only by
//! the owning agent's queue.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::parse_compact;
use crate::ids::NO_STAGE;
use crate::state::{Lifecycle, Registry, WorkingState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TaskStage,
    TaskAgent,
    StageAgent,
    StepTask,
    StepStage,
    StepAgent,
    Sequencing,
    Memory,
    Lock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

fn violation(kind: ViolationKind, detail: String) -> Violation {
    Violation { kind, detail }
}

/// Every broken edge of the reference graph. Only live steps (running or
/// queued) are checked; history is a record of the past.
pub fn check_references(registry: &Registry) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();

    for (task_id, task) in &registry.tasks {
        for stage_id in &task.stage_ids {
            match registry.stages.get(stage_id) {
                None => out.push(violation(TaskStage, format!("{task_id} lists missing stage {stage_id}"))),
                Some(stage) if &stage.task_id != task_id => out.push(violation(
                    TaskStage,
                    format!("{task_id} lists {stage_id} owned by {}", stage.task_id),
                )),
                _ => {}
            }
        }
        for agent_id in &task.agent_ids {
            match registry.agents.get(agent_id) {
                None => out.push(violation(TaskAgent, format!("{task_id} lists missing agent {agent_id}"))),
                Some(agent) if !agent.task_refs.contains(task_id) => out.push(violation(
                    TaskAgent,
                    format!("{agent_id} does not reference its task {task_id}"),
                )),
                _ => {}
            }
        }
    }

    for (stage_id, stage) in &registry.stages {
        match registry.tasks.get(&stage.task_id) {
            None => out.push(violation(TaskStage, format!("{stage_id} owned by missing task {}", stage.task_id))),
            Some(task) => {
                if !task.stage_ids.contains(stage_id) {
                    out.push(violation(TaskStage, format!("{} does not list {stage_id}", task.task_id)));
                }
                for agent_id in stage.agent_allocation.keys() {
                    if !task.has_member(agent_id) {
                        out.push(violation(
                            StageAgent,
                            format!("{stage_id} allocates {agent_id} outside task {}", task.task_id),
                        ));
                    }
                }
            }
        }
        for agent_id in stage.agent_allocation.keys() {
            match registry.agents.get(agent_id) {
                None => out.push(violation(StageAgent, format!("{stage_id} allocates missing agent {agent_id}"))),
                Some(agent) if !agent.stage_refs.contains(stage_id) => out.push(violation(
                    StageAgent,
                    format!("{agent_id} does not reference allocating stage {stage_id}"),
                )),
                _ => {}
            }
        }
    }

    for (agent_id, agent) in &registry.agents {
        for task_id in &agent.task_refs {
            match registry.tasks.get(task_id) {
                None => out.push(violation(TaskAgent, format!("{agent_id} references missing task {task_id}"))),
                Some(task) if !task.has_member(agent_id) => out.push(violation(
                    TaskAgent,
                    format!("{agent_id} references {task_id} which does not list it"),
                )),
                _ => {}
            }
        }
        for stage_id in &agent.stage_refs {
            match registry.stages.get(stage_id) {
                None => out.push(violation(StageAgent, format!("{agent_id} references missing stage {stage_id}"))),
                Some(stage) if !stage.agent_allocation.contains_key(agent_id) => out.push(violation(
                    StageAgent,
                    format!("{agent_id} references {stage_id} which does not allocate it"),
                )),
                _ => {}
            }
        }
        for step in agent.step_queue.live_steps() {
            if &step.agent_id != agent_id {
                out.push(violation(
                    StepAgent,
                    format!("{} held by {agent_id} names agent {}", step.step_id, step.agent_id),
                ));
            }
            match registry.tasks.get(&step.task_id) {
                None => out.push(violation(StepTask, format!("{} names missing task {}", step.step_id, step.task_id))),
                Some(task) if !task.has_member(agent_id) => out.push(violation(
                    StepTask,
                    format!("{} belongs to {} but {agent_id} is not a member", step.step_id, step.task_id),
                )),
                _ => {}
            }
            if step.stage_id != NO_STAGE {
                match registry.stages.get(&step.stage_id) {
                    None => out.push(violation(
                        StepStage,
                        format!("{} names missing stage {}", step.step_id, step.stage_id),
                    )),
                    Some(stage) if stage.task_id != step.task_id => out.push(violation(
                        StepStage,
                        format!(
                            "{} names stage {} of foreign task {}",
                            step.step_id, step.stage_id, stage.task_id
                        ),
                    )),
                    _ => {}
                }
            }
        }
    }
    out
}

/// Reference integrity plus the per-record invariants: one running stage per
/// task, sequential stage order, memory key format and lock/working-state
/// agreement.
pub fn check_invariants(registry: &Registry) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = check_references(registry);
    for (task_id, task) in &registry.tasks {
        let running = registry.running_stages(task_id);
        if running > 1 {
            out.push(violation(Sequencing, format!("{task_id} has {running} running stages")));
        }
        let mut seen_unfinished = false;
        for stage_id in &task.stage_ids {
            let Some(stage) = registry.stages.get(stage_id) else { continue };
            if stage.status == Lifecycle::Running && seen_unfinished {
                out.push(violation(Sequencing, format!("{stage_id} runs before an earlier stage finished")));
            }
            if !stage.status.is_terminal() {
                seen_unfinished = true;
            }
            if stage.status == Lifecycle::Finished && !stage.is_complete() {
                out.push(violation(Sequencing, format!("{stage_id} finished without every summary")));
            }
        }
    }
    for (agent_id, agent) in &registry.agents {
        for key in agent.persistent_memory.keys() {
            if parse_compact(key).is_none() {
                out.push(violation(Memory, format!("{agent_id} memory key `{key}` is not compact ISO")));
            }
        }
        let waiting = agent.working_state == WorkingState::Waiting;
        if waiting != !agent.step_locks.is_empty() {
            out.push(violation(Lock, format!("{agent_id} working_state disagrees with its locks")));
        }
        let allocating: BTreeSet<&String> = registry
            .stages
            .values()
            .filter(|s| s.agent_allocation.contains_key(agent_id))
            .map(|s| &s.stage_id)
            .collect();
        let refs: BTreeSet<&String> = agent.stage_refs.iter().collect();
        if allocating != refs {
            out.push(violation(StageAgent, format!("{agent_id} stage_refs differ from allocating stages")));
        }
    }
    out
}
