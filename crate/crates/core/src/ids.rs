//! Identifier generation and reserved identifiers.
//!
//! All identifiers come from per-run counters so that two runs of the same
//! scenario produce byte-identical logs.

use std::sync::atomic::{AtomicU64, Ordering};

/// Stage sentinel for steps that do not belong to any stage.
pub const NO_STAGE: &str = "no_stage";

/// Reserved sender id for messages injected by a human operator.
pub const HUMAN_OPERATOR: &str = "human-operator";

/// Reserved sender id for runtime-generated replies (e.g. info queries).
pub const SYSTEM_SENDER: &str = "system";

pub type TaskId = String;
pub type StageId = String;
pub type AgentId = String;
pub type StepId = String;
pub type MessageId = String;
pub type WaitId = String;

pub fn is_reserved_sender(id: &str) -> bool {
    id == HUMAN_OPERATOR || id == SYSTEM_SENDER
}

#[derive(Debug, Default)]
pub struct IdGen {
    task: AtomicU64,
    stage: AtomicU64,
    step: AtomicU64,
    message: AtomicU64,
    wait: AtomicU64,
}

fn bump(counter: &AtomicU64) -> u64 {
    counter.fetch_add(1, Ordering::SeqCst) + 1
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self) -> TaskId {
        format!("task-{}", bump(&self.task))
    }

    pub fn stage(&self) -> StageId {
        format!("stage-{}", bump(&self.stage))
    }

    pub fn step(&self) -> StepId {
        format!("step-{}", bump(&self.step))
    }

    pub fn message(&self) -> MessageId {
        format!("msg-{}", bump(&self.message))
    }

    /// Wait ids read as `wid-<counter>-<receiver>`.
    pub fn wait(&self, receiver: &str) -> WaitId {
        format!("wid-{}-{}", bump(&self.wait), receiver)
    }
}
