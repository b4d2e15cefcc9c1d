//! The four-tier state hierarchy: task, stage, agent and step records,
//! held together in a [`Registry`].

mod check;
pub(crate) mod lifecycle;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::{AgentId, MessageId, StageId, StepId, TaskId, WaitId, NO_STAGE};
use crate::messaging::Message;

pub use check::{check_invariants, check_references, Violation, ViolationKind};
pub use lifecycle::{advance_stage, clear_task, new_task};

/// Lifecycle shared by tasks and stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Init,
    Running,
    Finished,
    Failed,
}

impl Lifecycle {
    pub fn is_terminal(self) -> bool {
        matches!(self, Lifecycle::Finished | Lifecycle::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Init,
    Pending,
    Running,
    Finished,
    Failed,
}

impl StepStatus {
    /// Legal moves along `init -> pending -> running -> {finished | failed}`.
    pub fn can_transition_to(self, next: StepStatus) -> bool {
        use StepStatus::*;
        matches!(
            (self, next),
            (Init, Pending) | (Pending, Running) | (Running, Finished) | (Running, Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepType {
    Skill,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingState {
    Idle,
    Working,
    Waiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskState {
    pub task_id: TaskId,
    pub instruction: String,
    pub manager_id: AgentId,
    pub agent_ids: Vec<AgentId>,
    pub stage_ids: Vec<StageId>,
    pub current_stage_index: Option<usize>,
    pub comm_queue: VecDeque<Message>,
    pub status: Lifecycle,
    pub shared_info: BTreeMap<String, String>,
}

impl TaskState {
    pub fn has_member(&self, agent_id: &str) -> bool {
        self.agent_ids.iter().any(|a| a == agent_id)
    }

    pub fn current_stage_id(&self) -> Option<&StageId> {
        self.current_stage_index.and_then(|i| self.stage_ids.get(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub stage_id: StageId,
    pub task_id: TaskId,
    pub objective: String,
    pub agent_allocation: BTreeMap<AgentId, String>,
    pub completion_summaries: BTreeMap<AgentId, String>,
    pub status: Lifecycle,
}

impl StageState {
    pub fn is_complete(&self) -> bool {
        self.agent_allocation
            .keys()
            .all(|a| self.completion_summaries.contains_key(a))
    }
}

/// Link from a message-handling step back to the message that created it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InboundRef {
    pub message_id: MessageId,
    pub sender_id: AgentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_id: Option<WaitId>,
    #[serde(default)]
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub step_id: StepId,
    pub task_id: TaskId,
    pub stage_id: StageId,
    pub agent_id: AgentId,
    pub step_intent: String,
    pub step_type: StepType,
    pub executor: String,
    pub text_content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_content: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execute_result: Option<String>,
    pub status: StepStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inbound: Option<InboundRef>,
}

impl StepState {
    pub fn is_stage_bound(&self) -> bool {
        self.stage_id != NO_STAGE
    }

    /// Moves the step along its lifecycle; illegal moves are refused.
    pub fn transition(&mut self, next: StepStatus) -> bool {
        if self.status.can_transition_to(next) {
            self.status = next;
            true
        } else {
            false
        }
    }
}

/// Per-agent execution step manager.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub todo: VecDeque<StepState>,
    pub history: Vec<StepState>,
    pub current: Option<StepState>,
    /// Set when the running step's stage or task was released mid-action;
    /// its output is then discarded.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub current_released: bool,
}

impl AgentStep {
    pub fn live_steps(&self) -> impl Iterator<Item = &StepState> {
        self.current.iter().chain(self.todo.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent_id: AgentId,
    pub name: String,
    pub role: String,
    pub profile: String,
    pub llm_config_ref: String,
    pub skill_permissions: BTreeSet<String>,
    pub tool_permissions: BTreeSet<String>,
    pub persistent_memory: BTreeMap<String, String>,
    pub step_queue: AgentStep,
    pub step_locks: BTreeSet<WaitId>,
    pub task_refs: BTreeSet<TaskId>,
    pub stage_refs: BTreeSet<StageId>,
    pub working_state: WorkingState,
    #[serde(default)]
    pub paused: bool,
}

impl AgentState {
    pub fn may_execute(&self, step_type: StepType, executor: &str) -> bool {
        match step_type {
            StepType::Skill => self.skill_permissions.contains(executor),
            StepType::Tool => self.tool_permissions.contains(executor),
        }
    }

    pub fn recompute_working_state(&mut self) {
        self.working_state = if !self.step_locks.is_empty() {
            WorkingState::Waiting
        } else if self.step_queue.current.is_some() {
            WorkingState::Working
        } else {
            WorkingState::Idle
        };
    }
}

/// The global registry; serializes as the snapshot document
/// `{tasks, stages, agents}` with steps nested under their agents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub tasks: BTreeMap<TaskId, TaskState>,
    pub stages: BTreeMap<StageId, StageState>,
    pub agents: BTreeMap<AgentId, AgentState>,
}

impl Registry {
    pub fn running_stages(&self, task_id: &str) -> usize {
        self.stages
            .values()
            .filter(|s| s.task_id == task_id && s.status == Lifecycle::Running)
            .count()
    }
}
