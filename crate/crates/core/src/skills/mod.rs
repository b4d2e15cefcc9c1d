//! LLM-driven skills.
//!
//! Every skill builds a prompt bundle, asks the agent's back end, parses the
//! tagged reply and turns it into an [`ExecutorOutput`]. Unparseable replies
//! and back-end errors are retried a bounded number of times.

mod exec;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};

pub use parse::{
    extract_blocks, parse_memory_ops, return_waiting_id, strip_blocks, MemoryOp, MessageDraft, ParsedSkillOutput,
};
pub use prompt::{PromptBundle, PromptTemplates, Visibility};

use crate::engine::{ExecutorOutput, StepContext};
use crate::executor::Services;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    Planning,
    Reflection,
    Summary,
    InstructionGeneration,
    Think,
    QuickThink,
    SendMessage,
    ProcessMessage,
    TaskManager,
    AgentManager,
    AskInfo,
    ToolDecision,
    Decision,
}

impl SkillKind {
    pub const ALL: [SkillKind; 13] = [
        SkillKind::Planning,
        SkillKind::Reflection,
        SkillKind::Summary,
        SkillKind::InstructionGeneration,
        SkillKind::Think,
        SkillKind::QuickThink,
        SkillKind::SendMessage,
        SkillKind::ProcessMessage,
        SkillKind::TaskManager,
        SkillKind::AgentManager,
        SkillKind::AskInfo,
        SkillKind::ToolDecision,
        SkillKind::Decision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SkillKind::Planning => "planning",
            SkillKind::Reflection => "reflection",
            SkillKind::Summary => "summary",
            SkillKind::InstructionGeneration => "instruction_generation",
            SkillKind::Think => "think",
            SkillKind::QuickThink => "quick_think",
            SkillKind::SendMessage => "send_message",
            SkillKind::ProcessMessage => "process_message",
            SkillKind::TaskManager => "task_manager",
            SkillKind::AgentManager => "agent_manager",
            SkillKind::AskInfo => "ask_info",
            SkillKind::ToolDecision => "tool_decision",
            SkillKind::Decision => "decision",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Skills a plan may not schedule: summary only follows reflection and
    /// tool decisions only follow tool results.
    pub fn plannable(self) -> bool {
        !matches!(self, SkillKind::Summary | SkillKind::ToolDecision)
    }
}

impl std::fmt::Display for SkillKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn execute(kind: SkillKind, ctx: &StepContext, services: &Services) -> ExecutorOutput {
    exec::execute(kind, ctx, services)
}
