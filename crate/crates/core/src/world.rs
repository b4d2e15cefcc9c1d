//! Mutable runtime state: the registry plus everything needed to mutate it
//! reproducibly (counters, clock, event log, wait bookkeeping).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{format_compact, Clock};
use crate::error::{Error, Result};
use crate::event::{EventKind, EventLog};
use crate::ids::{AgentId, IdGen, MessageId, TaskId, WaitId};
use crate::messaging::Message;
use crate::state::{AgentState, Lifecycle, Registry, StageState, TaskState};

/// Outstanding wait lock: `sender` is blocked until `receiver` echoes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaitRecord {
    pub wait_id: WaitId,
    pub sender_id: AgentId,
    pub receiver_id: AgentId,
    pub task_id: TaskId,
    pub message_id: MessageId,
}

/// Final status of a task that has left the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub status: Lifecycle,
    pub reason: Option<String>,
    pub tick: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeSettings {
    /// Maximum reply-required exchanges in one dialogue chain.
    pub max_dialogue_depth: u32,
}

impl Default for RuntimeSettings {
    fn default() -> Self {
        Self {
            max_dialogue_depth: 16,
        }
    }
}

#[derive(Debug)]
pub struct World {
    pub registry: Registry,
    pub ids: Arc<IdGen>,
    pub clock: Clock,
    pub tick: u64,
    pub log: EventLog,
    /// Registration order; the deterministic scheduler ticks agents in it.
    pub agent_order: Vec<AgentId>,
    pub waits: BTreeMap<WaitId, WaitRecord>,
    pub delivered: BTreeSet<(MessageId, AgentId)>,
    pub outcomes: BTreeMap<TaskId, TaskOutcome>,
    pub operator_inbox: Vec<Message>,
    pub tool_servers: BTreeSet<String>,
    pub backends: BTreeSet<String>,
    pub settings: RuntimeSettings,
}

impl World {
    pub fn new(ids: Arc<IdGen>, clock: Clock) -> Self {
        Self {
            registry: Registry::default(),
            ids,
            clock,
            tick: 0,
            log: EventLog::default(),
            agent_order: Vec::new(),
            waits: BTreeMap::new(),
            delivered: BTreeSet::new(),
            outcomes: BTreeMap::new(),
            operator_inbox: Vec::new(),
            tool_servers: BTreeSet::new(),
            backends: BTreeSet::from(["default".to_string()]),
            settings: RuntimeSettings::default(),
        }
    }

    pub fn emit(&mut self, kind: EventKind) -> u64 {
        self.log.push(self.tick, kind)
    }

    pub fn warn(&mut self, agent_id: Option<&str>, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(agent = agent_id.unwrap_or("-"), "{message}");
        self.emit(EventKind::Warning {
            agent_id: agent_id.map(str::to_string),
            message,
        });
    }

    pub fn agent(&self, id: &str) -> Result<&AgentState> {
        self.registry
            .agents
            .get(id)
            .ok_or_else(|| Error::UnknownAgent(id.to_string()))
    }

    pub fn agent_mut(&mut self, id: &str) -> Result<&mut AgentState> {
        self.registry
            .agents
            .get_mut(id)
            .ok_or_else(|| Error::UnknownAgent(id.to_string()))
    }

    pub fn task(&self, id: &str) -> Result<&TaskState> {
        self.registry
            .tasks
            .get(id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn task_mut(&mut self, id: &str) -> Result<&mut TaskState> {
        self.registry
            .tasks
            .get_mut(id)
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn stage(&self, id: &str) -> Result<&StageState> {
        self.registry
            .stages
            .get(id)
            .ok_or_else(|| Error::UnknownStage(id.to_string()))
    }

    /// Fresh memory key for `agent_id`: the clock's current second, bumped
    /// forward until it does not collide with an existing entry.
    pub fn memory_key(&self, agent_id: &str) -> String {
        let mut at = self.clock.now(self.tick);
        let existing = self.registry.agents.get(agent_id).map(|a| &a.persistent_memory);
        loop {
            let key = format_compact(at);
            match existing {
                Some(memory) if memory.contains_key(&key) => at += chrono::Duration::seconds(1),
                _ => return key,
            }
        }
    }
}
