//! Relayed point-to-point messaging.
//!
//! Agents never reach each other directly: a message is enqueued on the
//! owning task's communication queue and the dispatcher later delivers it,
//! splitting broadcasts into one delivery per receiver. Delivery appends a
//! `send_message` step when a reply is required and a `process_message` step
//! otherwise. Wait ids on a message lock the sender until every receiver has
//! echoed its id back through `return_waiting_id`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::{self, StepDraft};
use crate::error::{Error, Result};
use crate::event::{EventKind, Placement};
use crate::ids::{
    is_reserved_sender, AgentId, MessageId, StageId, TaskId, WaitId, HUMAN_OPERATOR, NO_STAGE,
};
use crate::state::{InboundRef, StepState, StepType};
use crate::world::{WaitRecord, World};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Written by an agent's Send Message step or injected by the operator.
    #[default]
    Agent,
    /// Result of a tool step, addressed back to the executing agent.
    ToolResult,
    /// Answer to an info query.
    InfoReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: MessageId,
    pub task_id: TaskId,
    pub sender_id: AgentId,
    pub receiver_ids: Vec<AgentId>,
    pub content: String,
    pub stage_relative: StageId,
    pub need_reply: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waiting: Option<Vec<WaitId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_waiting_id: Option<WaitId>,
    #[serde(default)]
    pub delivered: bool,
    #[serde(default)]
    pub kind: MessageKind,
    #[serde(default)]
    pub dialogue_depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

impl Message {
    /// A plain one-way agent message with no stage affiliation.
    pub fn note(
        message_id: impl Into<String>,
        task_id: impl Into<String>,
        sender: impl Into<String>,
        receivers: Vec<String>,
        content: impl Into<String>,
    ) -> Self {
        Message {
            message_id: message_id.into(),
            task_id: task_id.into(),
            sender_id: sender.into(),
            receiver_ids: receivers,
            content: content.into(),
            stage_relative: NO_STAGE.to_string(),
            need_reply: false,
            waiting: None,
            return_waiting_id: None,
            delivered: false,
            kind: MessageKind::Agent,
            dialogue_depth: 0,
            payload: None,
        }
    }

    /// Checks the envelope invariants that do not depend on registry state.
    pub fn validate(&self) -> Result<()> {
        if self.receiver_ids.is_empty() {
            return Err(Error::Protocol("message has no receivers".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.receiver_ids {
            if !seen.insert(r) {
                return Err(Error::Protocol(format!("duplicate receiver `{r}`")));
            }
        }
        if let Some(waiting) = &self.waiting {
            if !self.need_reply {
                return Err(Error::Protocol(
                    "waiting ids on a message that needs no reply".into(),
                ));
            }
            if waiting.len() != self.receiver_ids.len() {
                return Err(Error::Protocol(format!(
                    "{} wait ids for {} receivers",
                    waiting.len(),
                    self.receiver_ids.len()
                )));
            }
        }
        Ok(())
    }

    pub fn wait_id_for(&self, receiver: &str) -> Option<&WaitId> {
        let index = self.receiver_ids.iter().position(|r| r == receiver)?;
        self.waiting.as_ref().and_then(|w| w.get(index))
    }
}

/// Puts `message` on its task's communication queue. If it carries wait ids
/// the sender is locked on them immediately.
pub fn enqueue(world: &mut World, mut message: Message) -> Result<()> {
    message.validate()?;
    let task = world.task(&message.task_id)?;
    let sender = message.sender_id.as_str();
    if !is_reserved_sender(sender) && !task.has_member(sender) {
        return Err(Error::Protocol(format!(
            "sender `{sender}` is not in task `{}`",
            task.task_id
        )));
    }
    for receiver in &message.receiver_ids {
        let to_operator = receiver == HUMAN_OPERATOR && sender != HUMAN_OPERATOR;
        if !to_operator && !task.has_member(receiver) {
            return Err(Error::Protocol(format!(
                "receiver `{receiver}` is not in task `{}`",
                task.task_id
            )));
        }
    }
    if message.stage_relative != NO_STAGE {
        match world.registry.stages.get(&message.stage_relative) {
            Some(stage) if stage.task_id == message.task_id => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "stage `{}` does not belong to task `{}`",
                    message.stage_relative, message.task_id
                )))
            }
        }
    }
    if let Some(waiting) = &message.waiting {
        if is_reserved_sender(sender) {
            return Err(Error::Protocol(format!("`{sender}` cannot wait for replies")));
        }
        let locks = &world.agent(sender)?.step_locks;
        for w in waiting {
            if world.waits.contains_key(w) || locks.contains(w) {
                return Err(Error::Protocol(format!("wait id `{w}` is not fresh")));
            }
        }
    }

    message.delivered = false;
    let waiting = message.waiting.clone();
    world.emit(EventKind::MessageEnqueued {
        message: message.clone(),
    });
    if let Some(waiting) = waiting {
        for (w, receiver) in waiting.iter().zip(&message.receiver_ids) {
            world.waits.insert(
                w.clone(),
                WaitRecord {
                    wait_id: w.clone(),
                    sender_id: message.sender_id.clone(),
                    receiver_id: receiver.clone(),
                    task_id: message.task_id.clone(),
                    message_id: message.message_id.clone(),
                },
            );
        }
        engine::acquire_locks(world, &message.sender_id, &waiting)?;
    }
    world.task_mut(&message.task_id)?.comm_queue.push_back(message);
    Ok(())
}

/// Delivers every undelivered message of `task_id`, one delivery per
/// receiver. Returns the number of messages taken off the queue.
pub fn dispatch_pending(world: &mut World, task_id: &str) -> Result<usize> {
    let pending: Vec<Message> = world.task_mut(task_id)?.comm_queue.drain(..).collect();
    let count = pending.len();
    for mut message in pending {
        for receiver in message.receiver_ids.clone() {
            deliver_one(world, &message, &receiver);
        }
        message.delivered = true;
    }
    Ok(count)
}

fn deliver_one(world: &mut World, message: &Message, receiver: &str) {
    if receiver == HUMAN_OPERATOR {
        world.operator_inbox.push(message.clone());
        emit_delivered(world, message, receiver, None);
        return;
    }
    let member = world
        .registry
        .tasks
        .get(&message.task_id)
        .is_some_and(|t| t.has_member(receiver))
        && world.registry.agents.contains_key(receiver);
    let outcome = if member {
        receive(world, receiver, message)
    } else {
        Err(Error::UnknownAgent(receiver.to_string()))
    };
    match outcome {
        Ok(Some(step)) => emit_delivered(world, message, receiver, Some(&step)),
        Ok(None) => {}
        Err(err) => {
            world.emit(EventKind::DeliveryFailed {
                message_id: message.message_id.clone(),
                receiver_id: receiver.to_string(),
                reason: err.to_string(),
            });
            // The receiver can never answer, so its wait lock would otherwise
            // block the sender forever.
            if let Some(w) = message.wait_id_for(receiver).cloned() {
                release_wait(world, &w, "receiver unreachable");
            }
        }
    }
}

fn emit_delivered(world: &mut World, message: &Message, receiver: &str, step: Option<&StepState>) {
    world.emit(EventKind::MessageDelivered {
        message_id: message.message_id.clone(),
        task_id: message.task_id.clone(),
        sender_id: message.sender_id.clone(),
        receiver_id: receiver.to_string(),
        kind: message.kind,
        need_reply: message.need_reply,
        step_id: step.map(|s| s.step_id.clone()),
        step_executor: step.map(|s| s.executor.clone()),
    });
}

/// Releases an outstanding wait id on whichever agent holds it.
pub(crate) fn release_wait(world: &mut World, wait_id: &str, reason: &str) {
    if let Some(record) = world.waits.remove(wait_id) {
        if world.registry.agents.contains_key(&record.sender_id) {
            engine::release_lock(world, &record.sender_id, wait_id, reason);
        }
    }
}

/// Receiver-side handling of one delivery. Returns the step created, or
/// `None` if this message was already delivered to `agent_id`.
pub fn receive(world: &mut World, agent_id: &str, message: &Message) -> Result<Option<StepState>> {
    let key = (message.message_id.clone(), agent_id.to_string());
    if world.delivered.contains(&key) {
        return Ok(None);
    }
    if !message.receiver_ids.iter().any(|r| r == agent_id) {
        return Err(Error::Protocol(format!(
            "`{agent_id}` is not a receiver of {}",
            message.message_id
        )));
    }
    world.agent(agent_id)?;

    if let Some(returned) = &message.return_waiting_id {
        if world.agent(agent_id)?.step_locks.contains(returned) {
            world.waits.remove(returned);
            engine::release_lock(world, agent_id, returned, "reply received");
        }
    }

    let sender = &message.sender_id;
    let wait_id = message.wait_id_for(agent_id).cloned();
    let (executor, placement, intent, mut text) = match message.kind {
        MessageKind::ToolResult => (
            "tool_decision",
            Placement::Insert,
            "decide whether to continue the tool call".to_string(),
            message.content.clone(),
        ),
        _ if message.need_reply => (
            "send_message",
            Placement::Append,
            format!("reply to {sender}"),
            format!("Message from {sender}:\n{}\n\nReply to {sender}.", message.content),
        ),
        _ => (
            "process_message",
            Placement::Append,
            format!("process message from {sender}"),
            format!("Message from {sender}:\n{}", message.content),
        ),
    };
    if let Some(w) = &wait_id {
        text.push_str(&format!("\nreturn_waiting_id: {w}"));
    }
    let draft = StepDraft {
        step_intent: intent,
        step_type: Some(StepType::Skill),
        executor: executor.to_string(),
        text_content: text,
        stage_id: Some(message.stage_relative.clone()),
        task_id: Some(message.task_id.clone()),
        instruction_content: match message.kind {
            MessageKind::ToolResult => message.payload.clone(),
            _ => None,
        },
        inbound: Some(InboundRef {
            message_id: message.message_id.clone(),
            sender_id: sender.clone(),
            wait_id,
            depth: message.dialogue_depth,
        }),
    };
    let cause = format!("message {}", message.message_id);
    let ids = match placement {
        Placement::Append => engine::append_steps(world, agent_id, vec![draft], &cause)?,
        Placement::Insert => engine::insert_steps(world, agent_id, vec![draft], &cause)?,
    };
    world.delivered.insert(key);
    let agent = world.agent(agent_id)?;
    let step = agent
        .step_queue
        .todo
        .iter()
        .find(|s| s.step_id == ids[0])
        .cloned()
        .expect("step just added");
    Ok(Some(step))
}
