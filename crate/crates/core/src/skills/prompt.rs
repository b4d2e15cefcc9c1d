//! Prompt assembly.
//!
//! Templates live in `prompts/<skill>.md`; the built-in copies can be
//! overridden from a directory. The memory contract is appended to every
//! skill's instruction text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SkillKind;
use crate::engine::StepContext;
use crate::error::{Error, Result};

pub const MEMORY_CONTRACT_FILE: &str = "memory_contract";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub context_text: String,
    pub instruction_text: String,
}

/// Which parts of the world a skill sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visibility {
    pub task: bool,
    pub stage: bool,
    pub history: bool,
}

impl Visibility {
    pub fn of(kind: SkillKind) -> Self {
        use SkillKind::*;
        let (task, stage, history) = match kind {
            Planning | Think | Summary | TaskManager => (true, true, true),
            QuickThink => (true, true, false),
            // Reflection reads the objective from its planning step instead.
            Reflection | Decision | ToolDecision | InstructionGeneration | SendMessage => (true, false, true),
            ProcessMessage | AgentManager | AskInfo => (true, false, false),
        };
        Visibility { task, stage, history }
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let builtin: [(&str, &str); 13] = [
            ("planning", include_str!("../../prompts/planning.md")),
            ("reflection", include_str!("../../prompts/reflection.md")),
            ("summary", include_str!("../../prompts/summary.md")),
            ("instruction_generation", include_str!("../../prompts/instruction_generation.md")),
            ("think", include_str!("../../prompts/think.md")),
            ("send_message", include_str!("../../prompts/send_message.md")),
            ("process_message", include_str!("../../prompts/process_message.md")),
            ("task_manager", include_str!("../../prompts/task_manager.md")),
            ("agent_manager", include_str!("../../prompts/agent_manager.md")),
            ("ask_info", include_str!("../../prompts/ask_info.md")),
            ("tool_decision", include_str!("../../prompts/tool_decision.md")),
            ("decision", include_str!("../../prompts/decision.md")),
            (MEMORY_CONTRACT_FILE, include_str!("../../prompts/memory_contract.md")),
        ];
        PromptTemplates {
            templates: builtin
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl PromptTemplates {
    /// Built-ins, overridden by any `<name>.md` found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut templates = PromptTemplates::default();
        let names: Vec<String> = templates.templates.keys().cloned().collect();
        for name in names {
            let path = dir.join(format!("{name}.md"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                templates.templates.insert(name, text);
            }
        }
        Ok(templates)
    }

    fn template_name(kind: SkillKind) -> &'static str {
        match kind {
            SkillKind::QuickThink => "think",
            other => other.name(),
        }
    }

    pub fn get(&self, name: &str) -> &str {
        self.templates.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn build(&self, kind: SkillKind, ctx: &StepContext, history_window: usize) -> PromptBundle {
        let vis = Visibility::of(kind);
        PromptBundle {
            system_text: system_text(ctx),
            context_text: context_text(ctx, vis, history_window),
            instruction_text: self.instruction_text(kind, ctx),
        }
    }

    fn instruction_text(&self, kind: SkillKind, ctx: &StepContext) -> String {
        let header = match kind {
            SkillKind::Think => "# Think (with step history)",
            SkillKind::QuickThink => "# Quick think (no step history)",
            _ => "",
        };
        let body = self.get(Self::template_name(kind)).replace("{{header}}", header);
        let mut out = body.trim().to_string();
        let step = &ctx.step;
        let _ = write!(out, "\n\n## Current step\nExecutor: {}\nIntent: {}\n", step.executor, step.step_intent);
        if !step.text_content.is_empty() {
            let _ = writeln!(out, "{}", step.text_content);
        }
        if kind == SkillKind::InstructionGeneration {
            if let Some(next) = ctx.next_step() {
                let _ = write!(
                    out,
                    "\n## Next tool step\nServer: {}\nIntent: {}\n{}\n",
                    next.executor, next.step_intent, next.text_content
                );
            }
        }
        if let Some(payload) = &step.instruction_content {
            let _ = write!(out, "\n## Attached data\n{payload}\n");
        }
        let _ = write!(out, "\n{}", self.get(MEMORY_CONTRACT_FILE).trim_end());
        out
    }
}

fn system_text(ctx: &StepContext) -> String {
    let agent = &ctx.agent;
    let mut out = format!("You are {}", agent.agent_id);
    if !agent.role.is_empty() {
        let _ = write!(out, ", {}", agent.role);
    }
    out.push('.');
    if !agent.profile.is_empty() {
        let _ = write!(out, "\n{}", agent.profile);
    }
    let skills: Vec<&str> = agent.skill_permissions.iter().map(String::as_str).collect();
    let _ = write!(out, "\nSkills: {}", skills.join(", "));
    if !agent.tool_permissions.is_empty() {
        let tools: Vec<&str> = agent.tool_permissions.iter().map(String::as_str).collect();
        let _ = write!(out, "\nTool servers: {}", tools.join(", "));
    }
    out
}

fn context_text(ctx: &StepContext, vis: Visibility, window: usize) -> String {
    let mut out = String::new();
    if vis.task {
        if let Some(task) = &ctx.task {
            let _ = write!(
                out,
                "## Task {}\n{}\nMembers: {}\n",
                task.task_id,
                task.instruction,
                task.agent_ids.join(", ")
            );
        }
    }
    if vis.stage {
        if let Some(stage) = &ctx.stage {
            let _ = write!(out, "\n## Stage {}\n{}\n", stage.stage_id, stage.objective);
            if let Some(goal) = stage.agent_allocation.get(&ctx.agent.agent_id) {
                let _ = writeln!(out, "Your sub-goal: {goal}");
            }
        }
    }
    if vis.history {
        let history: Vec<_> = ctx.stage_history().collect();
        let start = history.len().saturating_sub(window);
        if start < history.len() {
            let _ = write!(out, "\n## Step history\n");
            for step in &history[start..] {
                let _ = writeln!(
                    out,
                    "- [{}] {} ({}): {}\n  result: {}",
                    step.step_id,
                    step.executor,
                    serde_json::to_value(step.status)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                    step.step_intent,
                    step.execute_result.as_deref().unwrap_or("")
                );
            }
        }
    }
    let _ = write!(out, "\n## Persistent memory\n");
    if ctx.agent.persistent_memory.is_empty() {
        out.push_str("(empty)\n");
    }
    for (key, note) in &ctx.agent.persistent_memory {
        let _ = writeln!(out, "{key}: {note}");
    }
    out
}
