//! Routes a step to its executor and carries the shared services executors
//! need. Executors never see the world; they read a [`StepContext`] and
//! return an [`ExecutorOutput`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::engine::{ExecutorOutput, StepContext};
use crate::ids::IdGen;
use crate::skills::{self, PromptTemplates, SkillKind};
use crate::state::StepType;
use crate::tools::{self, ToolClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorSettings {
    pub history_window: usize,
    pub max_retries: u32,
    pub max_dialogue_depth: u32,
}

impl Default for ExecutorSettings {
    fn default() -> Self {
        ExecutorSettings {
            history_window: 20,
            max_retries: 2,
            max_dialogue_depth: 16,
        }
    }
}

#[derive(Clone)]
pub struct Services {
    pub backends: BTreeMap<String, Arc<dyn Backend>>,
    pub tools: Arc<ToolClient>,
    pub ids: Arc<IdGen>,
    pub templates: Arc<PromptTemplates>,
    pub settings: ExecutorSettings,
}

impl Services {
    pub fn backend(&self, name: &str) -> Option<&Arc<dyn Backend>> {
        self.backends.get(name)
    }
}

pub fn route(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let step = &ctx.step;
    if !ctx.agent.may_execute(step.step_type, &step.executor) {
        return ExecutorOutput::failed(format!(
            "agent `{}` has no permission to run `{}`",
            ctx.agent.agent_id, step.executor
        ));
    }
    match step.step_type {
        StepType::Skill => match SkillKind::parse(&step.executor) {
            Some(kind) => skills::execute(kind, ctx, services),
            None => ExecutorOutput::failed(format!("unknown skill `{}`", step.executor)),
        },
        StepType::Tool => {
            if !services.tools.is_configured(&step.executor) {
                return ExecutorOutput::failed(format!("unknown tool server `{}`", step.executor));
            }
            tools::run_tool_step(ctx, services)
        }
    }
}
