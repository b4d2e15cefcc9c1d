//! Run event log, serialized as JSON lines.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ids::{AgentId, MessageId, StageId, StepId, TaskId, WaitId};
use crate::messaging::{Message, MessageKind};
use crate::state::{Lifecycle, StepStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Append,
    Insert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Applied,
    Rejected,
}

/// One executed action, as recorded in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub agent_id: AgentId,
    pub step_id: StepId,
    pub executor: String,
    pub status: StepStatus,
    pub sync_instruction_kinds: Vec<String>,
    pub task_id: TaskId,
    pub stage_id: StageId,
    /// Verdict of decision-style skills (`continue`/`stop`, `done`/`adjust`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    AgentSpawned {
        agent_id: AgentId,
    },
    AgentModified {
        agent_id: AgentId,
        origin: AgentId,
    },
    AgentPaused {
        agent_id: AgentId,
    },
    AgentResumed {
        agent_id: AgentId,
    },
    TaskCreated {
        task_id: TaskId,
        manager_id: AgentId,
        agent_ids: Vec<AgentId>,
    },
    TaskJoined {
        task_id: TaskId,
        agent_id: AgentId,
    },
    StageAdded {
        task_id: TaskId,
        stage_id: StageId,
        objective: String,
    },
    StageStarted {
        task_id: TaskId,
        stage_id: StageId,
    },
    StageCompletion {
        task_id: TaskId,
        stage_id: StageId,
        agent_id: AgentId,
    },
    StageFinished {
        task_id: TaskId,
        stage_id: StageId,
        status: Lifecycle,
    },
    TaskFinished {
        task_id: TaskId,
        status: Lifecycle,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    TaskCleared {
        task_id: TaskId,
    },
    StepAdded {
        agent_id: AgentId,
        step_id: StepId,
        executor: String,
        task_id: TaskId,
        stage_id: StageId,
        placement: Placement,
        cause: String,
    },
    StepsReleased {
        agent_id: AgentId,
        scope: String,
        step_ids: Vec<StepId>,
    },
    Action(ActionRecord),
    Sync {
        origin: AgentId,
        kind: String,
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    MessageEnqueued {
        message: Message,
    },
    MessageDelivered {
        message_id: MessageId,
        task_id: TaskId,
        sender_id: AgentId,
        receiver_id: AgentId,
        kind: MessageKind,
        need_reply: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_id: Option<StepId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_executor: Option<String>,
    },
    DeliveryFailed {
        message_id: MessageId,
        receiver_id: AgentId,
        reason: String,
    },
    LockAcquired {
        agent_id: AgentId,
        wait_ids: Vec<WaitId>,
    },
    LockReleased {
        agent_id: AgentId,
        wait_id: WaitId,
        reason: String,
    },
    LockReleaseIgnored {
        agent_id: AgentId,
        wait_id: WaitId,
    },
    MemoryAdded {
        agent_id: AgentId,
        key: String,
    },
    MemoryDeleted {
        agent_id: AgentId,
        key: String,
    },
    ToolCall {
        agent_id: AgentId,
        server: String,
        capability: String,
        latency_ms: u64,
        ok: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Intervention {
        command: String,
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<Value>,
    },
    Warning {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_id: Option<AgentId>,
        message: String,
    },
}

impl EventKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventKind::AgentSpawned { .. } => "agent_spawned",
            EventKind::AgentModified { .. } => "agent_modified",
            EventKind::AgentPaused { .. } => "agent_paused",
            EventKind::AgentResumed { .. } => "agent_resumed",
            EventKind::TaskCreated { .. } => "task_created",
            EventKind::TaskJoined { .. } => "task_joined",
            EventKind::StageAdded { .. } => "stage_added",
            EventKind::StageStarted { .. } => "stage_started",
            EventKind::StageCompletion { .. } => "stage_completion",
            EventKind::StageFinished { .. } => "stage_finished",
            EventKind::TaskFinished { .. } => "task_finished",
            EventKind::TaskCleared { .. } => "task_cleared",
            EventKind::StepAdded { .. } => "step_added",
            EventKind::StepsReleased { .. } => "steps_released",
            EventKind::Action(_) => "action",
            EventKind::Sync { .. } => "sync",
            EventKind::MessageEnqueued { .. } => "message_enqueued",
            EventKind::MessageDelivered { .. } => "message_delivered",
            EventKind::DeliveryFailed { .. } => "delivery_failed",
            EventKind::LockAcquired { .. } => "lock_acquired",
            EventKind::LockReleased { .. } => "lock_released",
            EventKind::LockReleaseIgnored { .. } => "lock_release_ignored",
            EventKind::MemoryAdded { .. } => "memory_added",
            EventKind::MemoryDeleted { .. } => "memory_deleted",
            EventKind::ToolCall { .. } => "tool_call",
            EventKind::Intervention { .. } => "intervention",
            EventKind::Warning { .. } => "warning",
        }
    }

    /// Agent the event concerns, if any.
    pub fn agent(&self) -> Option<&str> {
        match self {
            EventKind::AgentSpawned { agent_id }
            | EventKind::AgentModified { agent_id, .. }
            | EventKind::AgentPaused { agent_id }
            | EventKind::AgentResumed { agent_id }
            | EventKind::TaskJoined { agent_id, .. }
            | EventKind::StageCompletion { agent_id, .. }
            | EventKind::StepAdded { agent_id, .. }
            | EventKind::StepsReleased { agent_id, .. }
            | EventKind::LockAcquired { agent_id, .. }
            | EventKind::LockReleased { agent_id, .. }
            | EventKind::LockReleaseIgnored { agent_id, .. }
            | EventKind::MemoryAdded { agent_id, .. }
            | EventKind::MemoryDeleted { agent_id, .. }
            | EventKind::ToolCall { agent_id, .. } => Some(agent_id),
            EventKind::Action(record) => Some(&record.agent_id),
            EventKind::Sync { origin, .. } => Some(origin),
            EventKind::MessageEnqueued { message } => Some(&message.sender_id),
            EventKind::MessageDelivered { receiver_id, .. }
            | EventKind::DeliveryFailed { receiver_id, .. } => Some(receiver_id),
            EventKind::Warning { agent_id, .. } => agent_id.as_deref(),
            _ => None,
        }
    }

    /// Task the event concerns, if any.
    pub fn task(&self) -> Option<&str> {
        match self {
            EventKind::TaskCreated { task_id, .. }
            | EventKind::TaskJoined { task_id, .. }
            | EventKind::StageAdded { task_id, .. }
            | EventKind::StageStarted { task_id, .. }
            | EventKind::StageCompletion { task_id, .. }
            | EventKind::StageFinished { task_id, .. }
            | EventKind::TaskFinished { task_id, .. }
            | EventKind::TaskCleared { task_id }
            | EventKind::StepAdded { task_id, .. }
            | EventKind::MessageDelivered { task_id, .. } => Some(task_id),
            EventKind::Action(record) => Some(&record.task_id),
            EventKind::MessageEnqueued { message } => Some(&message.task_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, tick: u64, kind: EventKind) -> u64 {
        let seq = self.events.len() as u64 + 1;
        self.events.push(Event { seq, tick, kind });
        seq
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with `seq > after`.
    pub fn since(&self, after: u64) -> &[Event] {
        let start = (after as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn to_jsonl(events: &[Event]) -> String {
        let mut out = String::new();
        for event in events {
            out.push_str(&serde_json::to_string(event).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<Event>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}
