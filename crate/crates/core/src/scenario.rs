//! Self-contained scenario documents: agents, tool servers, scripted
//! replies, tasks, timed interventions and the assertions to check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, ScriptedRule};
use crate::config::AgentConfig;
use crate::error::{Error, Result};
use crate::event::EventLog;
use crate::executor::ExecutorSettings;
use crate::ids::{AgentId, TaskId};
use crate::orchestrator::{
    InterventionCommand, Orchestrator, OrchestratorConfig, RunSummary, Scheduled, TaskRequest,
};
use crate::state::{self, Lifecycle};
use crate::tools::ServerConfig;

fn default_ticks() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTask {
    pub instruction: String,
    pub manager: AgentId,
    #[serde(default)]
    pub members: Vec<AgentId>,
    #[serde(default)]
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledIntervention {
    pub at_tick: u64,
    pub command: InterventionCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assertion {
    AllTasksFinished,
    TaskStatus { task_id: TaskId, status: Lifecycle },
    AgentMemoryAtLeast { agent_id: AgentId, count: usize },
    NoReferenceViolations,
    EventCount {
        event_type: String,
        #[serde(default)]
        min: Option<usize>,
        #[serde(default)]
        max: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub tool_servers: BTreeMap<String, ServerConfig>,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub scripted_rules: Vec<ScriptedRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
    #[serde(default)]
    pub tasks: Vec<ScenarioTask>,
    #[serde(default)]
    pub interventions: Vec<ScheduledIntervention>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    #[serde(default = "default_ticks")]
    pub ticks: u64,
    #[serde(default)]
    pub settings: ExecutorSettings,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

pub struct ScenarioRun {
    pub orchestrator: Orchestrator,
    pub summary: RunSummary,
    pub results: Vec<AssertionResult>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn event_log(&self) -> EventLog {
        self.orchestrator.world().log.clone()
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
        let mut scenario = Self::from_json(&text)?;
        if let (Some(dir), Some(base)) = (&scenario.prompts_dir, path.parent()) {
            if dir.is_relative() {
                scenario.prompts_dir = Some(base.join(dir));
            }
        }
        Ok(scenario)
    }

    /// Builds the orchestrator, registers agents and schedules tasks and
    /// interventions, without running anything.
    pub fn build(&self, seed: Option<u64>) -> Result<Orchestrator> {
        let orchestrator = Orchestrator::new(OrchestratorConfig {
            tool_servers: self.tool_servers.clone(),
            backends: self.backends.clone(),
            scripted_rules: self.scripted_rules.clone(),
            default_reply: self.default_reply.clone(),
            prompts_dir: self.prompts_dir.clone(),
            settings: self.settings,
            seed,
            check_each_round: true,
            ..Default::default()
        })?;
        for agent in &self.agents {
            orchestrator.spawn_agent(agent.clone())?;
        }
        for task in &self.tasks {
            if task.at_tick == 0 {
                orchestrator.start_task(&task.instruction, &task.manager, &task.members)?;
            } else {
                orchestrator.schedule(
                    task.at_tick,
                    Scheduled::StartTask(TaskRequest {
                        instruction: task.instruction.clone(),
                        manager: task.manager.clone(),
                        members: task.members.clone(),
                    }),
                );
            }
        }
        for item in &self.interventions {
            orchestrator.schedule(
                item.at_tick,
                Scheduled::Intervene {
                    command: item.command.clone(),
                },
            );
        }
        Ok(orchestrator)
    }

    pub fn run(&self, ticks: Option<u64>, seed: Option<u64>) -> Result<ScenarioRun> {
        let orchestrator = self.build(seed)?;
        let summary = orchestrator.run(ticks.unwrap_or(self.ticks));
        let results = self
            .assertions
            .iter()
            .map(|a| evaluate(a, &orchestrator, &summary, self.tasks.len()))
            .collect();
        Ok(ScenarioRun {
            orchestrator,
            summary,
            results,
        })
    }
}

fn evaluate(assertion: &Assertion, orch: &Orchestrator, summary: &RunSummary, started: usize) -> AssertionResult {
    let world = orch.world();
    let (passed, detail) = match assertion {
        Assertion::AllTasksFinished => {
            let finished = world
                .outcomes
                .values()
                .filter(|o| o.status == Lifecycle::Finished)
                .count();
            (
                world.registry.tasks.is_empty() && finished >= started,
                format!(
                    "{finished}/{started} finished, {} still registered",
                    world.registry.tasks.len()
                ),
            )
        }
        Assertion::TaskStatus { task_id, status } => {
            let actual = world
                .outcomes
                .get(task_id)
                .map(|o| o.status)
                .or_else(|| world.registry.tasks.get(task_id).map(|t| t.status));
            (actual == Some(*status), format!("{task_id} is {actual:?}"))
        }
        Assertion::AgentMemoryAtLeast { agent_id, count } => {
            let n = world
                .registry
                .agents
                .get(agent_id)
                .map_or(0, |a| a.persistent_memory.len());
            (n >= *count, format!("{agent_id} holds {n} memory entries"))
        }
        Assertion::NoReferenceViolations => {
            let now = state::check_references(&world.registry).len();
            (
                now == 0 && summary.reference_violations == 0,
                format!("{} during run, {now} at end", summary.reference_violations),
            )
        }
        Assertion::EventCount { event_type, min, max } => {
            let n = world
                .log
                .events()
                .iter()
                .filter(|e| e.kind.type_name() == event_type)
                .count();
            (
                min.is_none_or(|m| n >= m) && max.is_none_or(|m| n <= m),
                format!("{n} `{event_type}` events"),
            )
        }
    };
    AssertionResult {
        assertion: assertion.clone(),
        passed,
        detail,
    }
}
