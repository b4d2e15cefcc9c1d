//! The global synchronization facade.
//!
//! Executors never touch task-level state directly; they return
//! [`SyncInstruction`]s and the engine hands them here once, at the end of
//! the action. Instructions apply in order and each is atomic: a rejected
//! instruction leaves the registry as it was and does not stop the rest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, AgentConfig, AgentPatch};
use crate::error::{Error, Result};
use crate::event::{EventKind, Outcome};
use crate::ids::{is_reserved_sender, AgentId, StageId, TaskId, HUMAN_OPERATOR, SYSTEM_SENDER};
use crate::messaging::{self, Message, MessageKind};
use crate::state::{self, Lifecycle, StageState};
use crate::world::World;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    #[default]
    Finished,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTarget {
    Task,
    Stage,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum SyncInstruction {
    SendMessage(Message),
    UpdateStageCompletion {
        stage_id: StageId,
        agent_id: AgentId,
        summary: String,
    },
    FinishStage {
        stage_id: StageId,
        #[serde(default)]
        outcome: StageOutcome,
    },
    NextStage {
        task_id: TaskId,
    },
    AddStage {
        task_id: TaskId,
        objective: String,
        agent_allocation: BTreeMap<AgentId, String>,
    },
    UpdateTask {
        task_id: TaskId,
        #[serde(default)]
        instruction: Option<String>,
        #[serde(default)]
        shared_info: BTreeMap<String, String>,
    },
    FinishTask {
        task_id: TaskId,
    },
    CreateAgent {
        config: AgentConfig,
        #[serde(default)]
        join_task: Option<TaskId>,
    },
    ModifyAgent {
        agent_id: AgentId,
        changes: AgentPatch,
    },
    QueryInfo {
        task_id: TaskId,
        target: QueryTarget,
        #[serde(default)]
        id: Option<String>,
    },
}

impl SyncInstruction {
    pub fn kind(&self) -> &'static str {
        match self {
            SyncInstruction::SendMessage(_) => "send_message",
            SyncInstruction::UpdateStageCompletion { .. } => "update_stage_completion",
            SyncInstruction::FinishStage { .. } => "finish_stage",
            SyncInstruction::NextStage { .. } => "next_stage",
            SyncInstruction::AddStage { .. } => "add_stage",
            SyncInstruction::UpdateTask { .. } => "update_task",
            SyncInstruction::FinishTask { .. } => "finish_task",
            SyncInstruction::CreateAgent { .. } => "create_agent",
            SyncInstruction::ModifyAgent { .. } => "modify_agent",
            SyncInstruction::QueryInfo { .. } => "query_info",
        }
    }

    /// Parses `{kind, payload}`; unknown kinds and missing payload keys are
    /// rejected with the reason.
    pub fn from_value(value: Value) -> std::result::Result<Self, String> {
        serde_json::from_value(value).map_err(|e| e.to_string())
    }

    fn required_skill(&self) -> Option<&'static str> {
        match self {
            SyncInstruction::CreateAgent { .. } | SyncInstruction::ModifyAgent { .. } => Some("agent_manager"),
            SyncInstruction::AddStage { .. }
            | SyncInstruction::UpdateTask { .. }
            | SyncInstruction::FinishTask { .. } => Some("task_manager"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyResult {
    pub kind: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ApplyResult {
    pub fn is_applied(&self) -> bool {
        self.outcome == Outcome::Applied
    }
}

/// Applies `instructions` in order on behalf of `origin`.
pub fn apply(world: &mut World, instructions: Vec<SyncInstruction>, origin: &str) -> Vec<ApplyResult> {
    instructions
        .into_iter()
        .map(|instruction| {
            let kind = instruction.kind();
            let outcome = apply_one(world, instruction, origin);
            let (outcome, reason) = match outcome {
                Ok(()) => (Outcome::Applied, None),
                Err(err) => (Outcome::Rejected, Some(err.to_string())),
            };
            world.emit(EventKind::Sync {
                origin: origin.to_string(),
                kind: kind.to_string(),
                outcome,
                reason: reason.clone(),
            });
            ApplyResult {
                kind: kind.to_string(),
                outcome,
                reason,
            }
        })
        .collect()
}

fn check_permission(world: &World, instruction: &SyncInstruction, origin: &str) -> Result<()> {
    if origin == HUMAN_OPERATOR {
        return Ok(());
    }
    let agent = world.agent(origin)?;
    if let Some(skill) = instruction.required_skill() {
        if !agent.skill_permissions.contains(skill) {
            return Err(Error::Permission(format!(
                "`{origin}` needs the {skill} skill for {}",
                instruction.kind()
            )));
        }
    }
    Ok(())
}

fn check_member(world: &World, task_id: &str, origin: &str) -> Result<()> {
    let task = world.task(task_id)?;
    if origin != HUMAN_OPERATOR && !task.has_member(origin) {
        return Err(Error::Permission(format!("`{origin}` is not in task `{task_id}`")));
    }
    Ok(())
}

fn apply_one(world: &mut World, instruction: SyncInstruction, origin: &str) -> Result<()> {
    check_permission(world, &instruction, origin)?;
    match instruction {
        SyncInstruction::SendMessage(message) => {
            if message.sender_id != origin && !is_reserved_sender(&message.sender_id) {
                return Err(Error::Protocol(format!(
                    "`{origin}` cannot send as `{}`",
                    message.sender_id
                )));
            }
            messaging::enqueue(world, message)
        }
        SyncInstruction::UpdateStageCompletion {
            stage_id,
            agent_id,
            summary,
        } => {
            let stage = world.stage(&stage_id)?;
            if stage.status != Lifecycle::Running {
                return Err(Error::Sequencing(format!("stage `{stage_id}` is not running")));
            }
            if origin != HUMAN_OPERATOR && agent_id != origin {
                return Err(Error::Permission(format!("`{origin}` cannot report for `{agent_id}`")));
            }
            if !stage.agent_allocation.contains_key(&agent_id) {
                return Err(Error::Protocol(format!("`{agent_id}` is not allocated to `{stage_id}`")));
            }
            let task_id = stage.task_id.clone();
            world
                .registry
                .stages
                .get_mut(&stage_id)
                .expect("checked above")
                .completion_summaries
                .insert(agent_id.clone(), summary);
            world.emit(EventKind::StageCompletion {
                task_id,
                stage_id,
                agent_id,
            });
            Ok(())
        }
        SyncInstruction::FinishStage { stage_id, outcome } => finish_stage(world, &stage_id, outcome, origin),
        SyncInstruction::NextStage { task_id } => {
            check_member(world, &task_id, origin)?;
            state::advance_stage(world, &task_id).map(|_| ())
        }
        SyncInstruction::AddStage {
            task_id,
            objective,
            agent_allocation,
        } => {
            check_member(world, &task_id, origin)?;
            let task = world.task(&task_id)?;
            if task.status.is_terminal() && task.status != Lifecycle::Failed {
                return Err(Error::Sequencing(format!("task `{task_id}` is over")));
            }
            if agent_allocation.is_empty() {
                return Err(Error::Protocol("a stage must allocate at least one agent".into()));
            }
            if let Some(outsider) = agent_allocation.keys().find(|a| !task.has_member(a)) {
                return Err(Error::Protocol(format!("`{outsider}` is not in task `{task_id}`")));
            }
            let stage_id = world.ids.stage();
            for agent_id in agent_allocation.keys() {
                world.agent_mut(agent_id)?.stage_refs.insert(stage_id.clone());
            }
            world.task_mut(&task_id)?.stage_ids.push(stage_id.clone());
            world.registry.stages.insert(
                stage_id.clone(),
                StageState {
                    stage_id: stage_id.clone(),
                    task_id: task_id.clone(),
                    objective: objective.clone(),
                    agent_allocation,
                    completion_summaries: BTreeMap::new(),
                    status: Lifecycle::Init,
                },
            );
            world.emit(EventKind::StageAdded {
                task_id,
                stage_id,
                objective,
            });
            Ok(())
        }
        SyncInstruction::UpdateTask {
            task_id,
            instruction,
            shared_info,
        } => {
            check_member(world, &task_id, origin)?;
            let task = world.task_mut(&task_id)?;
            if let Some(instruction) = instruction {
                if instruction.trim().is_empty() {
                    return Err(Error::EmptyInstruction);
                }
                task.instruction = instruction;
            }
            task.shared_info.extend(shared_info);
            Ok(())
        }
        SyncInstruction::FinishTask { task_id } => {
            check_member(world, &task_id, origin)?;
            if world.registry.running_stages(&task_id) > 0 {
                return Err(Error::Sequencing(format!("task `{task_id}` still has a running stage")));
            }
            let status = match world.task(&task_id)?.status {
                Lifecycle::Failed => Lifecycle::Failed,
                _ => Lifecycle::Finished,
            };
            state::lifecycle::finish_task(world, &task_id, status, Some(format!("finished by {origin}")))
        }
        SyncInstruction::CreateAgent { config, join_task } => {
            if let Some(task_id) = &join_task {
                check_member(world, task_id, origin)?;
            }
            let agent_id = config::register_agent(world, config)?;
            if let Some(task_id) = join_task {
                join(world, &task_id, &agent_id)?;
            }
            Ok(())
        }
        SyncInstruction::ModifyAgent { agent_id, changes } => config::apply_patch(world, &agent_id, &changes, origin),
        SyncInstruction::QueryInfo { task_id, target, id } => {
            check_member(world, &task_id, origin)?;
            let content = answer_query(world, &task_id, target, id.as_deref(), origin);
            let message = Message {
                kind: MessageKind::InfoReply,
                payload: Some(content.clone()),
                ..Message::note(
                    world.ids.message(),
                    task_id,
                    SYSTEM_SENDER,
                    vec![origin.to_string()],
                    content.to_string(),
                )
            };
            messaging::enqueue(world, message)
        }
    }
}

fn join(world: &mut World, task_id: &str, agent_id: &str) -> Result<()> {
    let task = world.task_mut(task_id)?;
    if !task.has_member(agent_id) {
        task.agent_ids.push(agent_id.to_string());
    }
    world.agent_mut(agent_id)?.task_refs.insert(task_id.to_string());
    world.emit(EventKind::TaskJoined {
        task_id: task_id.to_string(),
        agent_id: agent_id.to_string(),
    });
    Ok(())
}

/// Marks a running stage finished (or failed) and releases its steps. A
/// finished stage advances the task; a failed one halts it.
pub(crate) fn finish_stage(world: &mut World, stage_id: &str, outcome: StageOutcome, origin: &str) -> Result<()> {
    let stage = world.stage(stage_id)?;
    let task_id = stage.task_id.clone();
    check_member(world, &task_id, origin)?;
    if stage.status != Lifecycle::Running {
        return Err(Error::Sequencing(format!("stage `{stage_id}` is not running")));
    }
    if outcome == StageOutcome::Finished && !stage.is_complete() {
        let missing: Vec<&String> = stage
            .agent_allocation
            .keys()
            .filter(|a| !stage.completion_summaries.contains_key(*a))
            .collect();
        return Err(Error::Sequencing(format!(
            "stage `{stage_id}` still waits for summaries from {missing:?}"
        )));
    }
    let allocated: Vec<AgentId> = stage.agent_allocation.keys().cloned().collect();
    let status = match outcome {
        StageOutcome::Finished => Lifecycle::Finished,
        StageOutcome::Failed => Lifecycle::Failed,
    };
    world.registry.stages.get_mut(stage_id).expect("checked").status = status;
    world.emit(EventKind::StageFinished {
        task_id: task_id.clone(),
        stage_id: stage_id.to_string(),
        status,
    });
    for agent_id in &allocated {
        crate::engine::release_stage_steps(world, agent_id, stage_id);
    }
    match outcome {
        StageOutcome::Finished => state::advance_stage(world, &task_id).map(|_| ()),
        StageOutcome::Failed => {
            world.task_mut(&task_id)?.status = Lifecycle::Failed;
            Ok(())
        }
    }
}

fn answer_query(world: &World, task_id: &str, target: QueryTarget, id: Option<&str>, origin: &str) -> Value {
    let task = world.task(task_id).expect("membership checked");
    match target {
        QueryTarget::Task => {
            let wanted = id.unwrap_or(task_id);
            if wanted != task_id {
                return json!({"error": format!("task `{wanted}` is not visible from `{task_id}`")});
            }
            json!({
                "task_id": task.task_id,
                "instruction": task.instruction,
                "status": task.status,
                "agent_ids": task.agent_ids,
                "stage_ids": task.stage_ids,
                "current_stage": task.current_stage_id(),
                "shared_info": task.shared_info,
            })
        }
        QueryTarget::Stage => {
            let wanted = id.map(str::to_string).or_else(|| task.current_stage_id().cloned());
            match wanted.and_then(|s| world.registry.stages.get(&s)) {
                Some(stage) if stage.task_id == task_id => json!({
                    "stage_id": stage.stage_id,
                    "objective": stage.objective,
                    "status": stage.status,
                    "agent_allocation": stage.agent_allocation,
                    "completed_by": stage.completion_summaries.keys().collect::<Vec<_>>(),
                }),
                _ => json!({"error": "no such stage in this task"}),
            }
        }
        QueryTarget::Agent => {
            let wanted = id.unwrap_or(origin);
            match world.registry.agents.get(wanted) {
                Some(agent) => json!({
                    "agent_id": agent.agent_id,
                    "role": agent.role,
                    "profile": agent.profile,
                    "skills": agent.skill_permissions,
                    "tools": agent.tool_permissions,
                    "working_state": agent.working_state,
                }),
                None => json!({"error": format!("unknown agent `{wanted}`")}),
            }
        }
    }
}

/// Helper for building a stage-less message from an agent.
pub fn message_to(world: &World, task_id: &str, sender: &str, receivers: Vec<AgentId>, content: &str) -> Message {
    Message::note(world.ids.message(), task_id, sender, receivers, content)
}

