//! The running system: registry, scheduler, dispatcher and the operator's
//! entry points.
//!
//! Deterministic mode runs rounds: every agent (in registration order, or a
//! seeded permutation of it) takes at most one action, then every task's
//! queue is dispatched once. Live mode gives each agent its own thread and
//! dispatches on a fixed period; executors run outside the world lock.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::{BackendConfig, ScriptedBackend, ScriptedRule};
use crate::clock::Clock;
use crate::config::{self, AgentConfig, AgentPatch};
use crate::engine::{self, StepDraft};
use crate::error::{Error, Result};
use crate::event::{Event, EventKind, EventLog, Outcome};
use crate::executor::{self, ExecutorSettings, Services};
use crate::ids::{AgentId, IdGen, StageId, TaskId, HUMAN_OPERATOR, NO_STAGE};
use crate::messaging::{self, Message};
use crate::skills::PromptTemplates;
use crate::state::{self, Lifecycle, Registry};
use crate::sync::{self, StageOutcome};
use crate::tools::{LatencyMode, ServerConfig, ToolClient};
use crate::world::World;

pub const DISPATCH_PERIOD: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Default)]
pub struct OrchestratorConfig {
    pub tool_servers: BTreeMap<String, ServerConfig>,
    /// Named back ends; `default` is the scripted back end unless given.
    pub backends: BTreeMap<String, BackendConfig>,
    pub scripted_rules: Vec<ScriptedRule>,
    pub default_reply: Option<String>,
    pub prompts_dir: Option<PathBuf>,
    pub settings: ExecutorSettings,
    pub clock: Clock,
    pub latency: LatencyMode,
    /// Permutes the per-round agent order, reproducibly.
    pub seed: Option<u64>,
    /// Run `check_references` after every round and count violations.
    pub check_each_round: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum InterventionCommand {
    InjectMessage {
        receivers: Vec<AgentId>,
        content: String,
        #[serde(default)]
        need_reply: bool,
        #[serde(default)]
        task_id: Option<TaskId>,
        #[serde(default)]
        stage_id: Option<StageId>,
    },
    EditAgentState {
        agent_id: AgentId,
        changes: AgentPatch,
    },
    PauseAgent {
        agent_id: AgentId,
    },
    ResumeAgent {
        agent_id: AgentId,
    },
    EndStage {
        stage_id: StageId,
        #[serde(default)]
        outcome: StageOutcome,
    },
    CancelTask {
        task_id: TaskId,
    },
}

impl InterventionCommand {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionCommand::InjectMessage { .. } => "inject_message",
            InterventionCommand::EditAgentState { .. } => "edit_agent_state",
            InterventionCommand::PauseAgent { .. } => "pause_agent",
            InterventionCommand::ResumeAgent { .. } => "resume_agent",
            InterventionCommand::EndStage { .. } => "end_stage",
            InterventionCommand::CancelTask { .. } => "cancel_task",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyReport {
    pub outcome: Outcome,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub instruction: String,
    pub manager: AgentId,
    #[serde(default)]
    pub members: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduled {
    StartTask(TaskRequest),
    Intervene { command: InterventionCommand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// The stop predicate held.
    Completed,
    /// Nothing could move: no action, no delivery, nothing scheduled.
    Quiescent,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub rounds: u64,
    pub actions: u64,
    pub reference_violations: usize,
}

pub struct Orchestrator {
    world: Mutex<World>,
    services: Services,
    scheduled: Mutex<BTreeMap<u64, Vec<Scheduled>>>,
    rng: Mutex<Option<ChaCha8Rng>>,
    check_each_round: bool,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Result<Self> {
        let ids = Arc::new(IdGen::default());
        let scripted = Arc::new(ScriptedBackend::new(config.scripted_rules, config.default_reply)?);
        let mut backends = BTreeMap::new();
        for (name, backend) in &config.backends {
            backends.insert(name.clone(), backend.build(&scripted)?);
        }
        backends.entry("default".to_string()).or_insert_with(|| scripted.clone() as _);
        let templates = match &config.prompts_dir {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::default(),
        };
        let tools = Arc::new(ToolClient::new(config.tool_servers, config.latency)?);

        let mut world = World::new(ids.clone(), config.clock);
        world.tool_servers = tools.server_names();
        world.backends = backends.keys().cloned().collect();
        world.settings.max_dialogue_depth = config.settings.max_dialogue_depth;
        Ok(Orchestrator {
            world: Mutex::new(world),
            services: Services {
                backends,
                tools,
                ids,
                templates: Arc::new(templates),
                settings: config.settings,
            },
            scheduled: Mutex::default(),
            rng: Mutex::new(config.seed.map(ChaCha8Rng::seed_from_u64)),
            check_each_round: config.check_each_round,
        })
    }

    /// Locks the world. Hold the guard briefly; live agents wait on it.
    pub fn world(&self) -> MutexGuard<'_, World> {
        self.world.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn tick(&self) -> u64 {
        self.world().tick
    }

    pub fn spawn_agent(&self, config: AgentConfig) -> Result<AgentId> {
        let tools: Vec<String> = config.tools.clone();
        let id = config::register_agent(&mut self.world(), config)?;
        let (_, failed) = self.services.tools.ensure_sessions(tools.iter());
        if !failed.is_empty() {
            let mut world = self.world();
            for (server, err) in failed {
                world.warn(Some(&id), format!("tool server `{server}` unavailable: {err}"));
            }
        }
        Ok(id)
    }

    /// Creates a task group and gives the manager its first step.
    pub fn start_task(&self, instruction: &str, manager: &str, members: &[AgentId]) -> Result<TaskId> {
        start_task_in(&mut self.world(), instruction, manager, members)
    }

    pub fn schedule(&self, at_tick: u64, item: Scheduled) {
        self.scheduled
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .entry(at_tick)
            .or_default()
            .push(item);
    }

    fn has_scheduled(&self) -> bool {
        !self.scheduled.lock().unwrap_or_else(|p| p.into_inner()).is_empty()
    }

    fn apply_due(&self, world: &mut World) {
        let due: Vec<Scheduled> = {
            let mut scheduled = self.scheduled.lock().unwrap_or_else(|p| p.into_inner());
            let later = scheduled.split_off(&(world.tick + 1));
            let due = std::mem::replace(&mut *scheduled, later);
            due.into_values().flatten().collect()
        };
        for item in due {
            match item {
                Scheduled::StartTask(req) => {
                    if let Err(err) = start_task_in(world, &req.instruction, &req.manager, &req.members) {
                        world.warn(None, format!("scheduled task not started: {err}"));
                    }
                }
                Scheduled::Intervene { command } => {
                    let _ = intervene_in(world, command);
                }
            }
        }
    }

    pub fn intervene(&self, command: InterventionCommand) -> Result<ApplyReport> {
        intervene_in(&mut self.world(), command)
    }

    /// One deterministic round. Returns the number of actions taken and
    /// messages dispatched.
    pub fn round(&self) -> (u64, usize) {
        let mut world = self.world();
        world.tick += 1;
        self.apply_due(&mut world);
        let mut order = world.agent_order.clone();
        if let Some(rng) = self.rng.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            order.shuffle(rng);
        }
        let mut actions = 0;
        for agent_id in order {
            if engine::next_action(&mut world, &self.services, &agent_id)
                .executed()
                .is_some()
            {
                actions += 1;
            }
        }
        (actions, dispatch_all(&mut world))
    }

    /// Runs deterministic rounds until `until` holds, nothing can move, or
    /// `budget` rounds have run.
    pub fn run_until(&self, budget: u64, until: impl Fn(&World) -> bool) -> RunSummary {
        let mut summary = RunSummary {
            status: RunStatus::BudgetExhausted,
            rounds: 0,
            actions: 0,
            reference_violations: 0,
        };
        while summary.rounds < budget {
            if until(&self.world()) && !self.has_scheduled() {
                summary.status = RunStatus::Completed;
                return summary;
            }
            let (actions, dispatched) = self.round();
            summary.rounds += 1;
            summary.actions += actions;
            if self.check_each_round {
                summary.reference_violations += state::check_references(&self.world().registry).len();
            }
            if actions == 0 && dispatched == 0 && !self.has_scheduled() {
                let world = self.world();
                let busy = world.registry.agents.values().any(|a| a.step_queue.current.is_some());
                if !busy {
                    summary.status = if until(&world) {
                        RunStatus::Completed
                    } else {
                        RunStatus::Quiescent
                    };
                    return summary;
                }
            }
        }
        if until(&self.world()) && !self.has_scheduled() {
            summary.status = RunStatus::Completed;
        }
        summary
    }

    /// Runs until every task has left the registry.
    pub fn run(&self, budget: u64) -> RunSummary {
        self.run_until(budget, all_tasks_done)
    }

    pub fn snapshot(&self) -> Registry {
        self.world().registry.clone()
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string(&self.world().registry).expect("registry serializes")
    }

    pub fn agent_json(&self, agent_id: &str) -> Option<String> {
        let world = self.world();
        world
            .registry
            .agents
            .get(agent_id)
            .map(|a| serde_json::to_string(a).expect("agent serializes"))
    }

    pub fn events_since(&self, after: u64) -> Vec<Event> {
        self.world().log.since(after).to_vec()
    }

    pub fn event_log_jsonl(&self) -> String {
        EventLog::to_jsonl(self.world().log.events())
    }

    pub fn operator_inbox(&self) -> Vec<Message> {
        self.world().operator_inbox.clone()
    }

    /// Starts live mode: one thread per agent plus the dispatcher.
    pub fn start_live(self: &Arc<Self>) -> LiveHandle {
        self.start_live_with(DISPATCH_PERIOD)
    }

    pub fn start_live_with(self: &Arc<Self>, period: Duration) -> LiveHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        let (me, flag) = (self.clone(), stop.clone());
        threads.push(spawn_named("dispatcher", move || {
            while !flag.load(Ordering::SeqCst) {
                std::thread::sleep(period);
                let mut world = me.world();
                world.tick += 1;
                me.apply_due(&mut world);
                dispatch_all(&mut world);
            }
        }));

        let (me, flag) = (self.clone(), stop.clone());
        threads.push(spawn_named("agent-supervisor", move || {
            let mut started: BTreeSet<AgentId> = BTreeSet::new();
            let mut workers = Vec::new();
            while !flag.load(Ordering::SeqCst) {
                let order = me.world().agent_order.clone();
                for agent_id in order {
                    if started.insert(agent_id.clone()) {
                        let (me, flag) = (me.clone(), flag.clone());
                        workers.push(spawn_named(&format!("agent-{agent_id}"), move || {
                            live_agent(&me, &agent_id, &flag)
                        }));
                    }
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            for w in workers {
                let _ = w.join();
            }
        }));
        LiveHandle { stop, threads }
    }
}

fn spawn_named(name: &str, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name(name.to_string())
        .spawn(f)
        .expect("thread spawn")
}

fn live_agent(orch: &Orchestrator, agent_id: &str, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        let began = engine::begin_action(&mut orch.world(), agent_id);
        match began {
            Ok(ctx) => {
                let output = executor::route(&ctx, &orch.services);
                engine::finish_action(&mut orch.world(), &ctx, output);
            }
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

pub struct LiveHandle {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl LiveHandle {
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for LiveHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn all_tasks_done(world: &World) -> bool {
    world.registry.tasks.is_empty()
}

fn dispatch_all(world: &mut World) -> usize {
    let task_ids: Vec<TaskId> = world.registry.tasks.keys().cloned().collect();
    task_ids
        .iter()
        .map(|t| messaging::dispatch_pending(world, t).unwrap_or(0))
        .sum()
}

fn start_task_in(world: &mut World, instruction: &str, manager: &str, members: &[AgentId]) -> Result<TaskId> {
    if !world.agent(manager)?.skill_permissions.contains("task_manager") {
        return Err(Error::Permission(format!("manager `{manager}` lacks the task_manager skill")));
    }
    let mut group = vec![manager.to_string()];
    group.extend(members.iter().cloned());
    let task_id = state::new_task(world, instruction, &group)?;
    let seed = StepDraft {
        task_id: Some(task_id.clone()),
        stage_id: Some(NO_STAGE.to_string()),
        ..StepDraft::skill("task_manager", "organise the task", format!("Task instruction:\n{instruction}"))
    };
    engine::append_steps(world, manager, vec![seed], "task start")?;
    world.task_mut(&task_id)?.status = Lifecycle::Running;
    Ok(task_id)
}

fn intervene_in(world: &mut World, command: InterventionCommand) -> Result<ApplyReport> {
    let name = command.name();
    let result = apply_intervention(world, command);
    let (outcome, detail) = match &result {
        Ok(detail) => (Outcome::Applied, detail.clone()),
        Err(err) => (Outcome::Rejected, Some(json!({"reason": err.to_string()}))),
    };
    world.emit(EventKind::Intervention {
        command: name.to_string(),
        outcome,
        detail: detail.clone(),
    });
    result.map(|detail| ApplyReport {
        outcome,
        command: name.to_string(),
        detail,
    })
}

fn apply_intervention(world: &mut World, command: InterventionCommand) -> Result<Option<serde_json::Value>> {
    match command {
        InterventionCommand::InjectMessage {
            receivers,
            content,
            need_reply,
            task_id,
            stage_id,
        } => {
            if receivers.is_empty() {
                return Err(Error::Intervention("no receivers".into()));
            }
            let mut groups: BTreeMap<TaskId, Vec<AgentId>> = BTreeMap::new();
            for r in &receivers {
                let task = match &task_id {
                    Some(t) => t.clone(),
                    None => {
                        let refs = &world.agent(r)?.task_refs;
                        match refs.len() {
                            1 => refs.iter().next().cloned().expect("one ref"),
                            0 => return Err(Error::Intervention(format!("`{r}` is in no task"))),
                            _ => {
                                return Err(Error::Intervention(format!(
                                    "`{r}` is in several tasks; name the task"
                                )))
                            }
                        }
                    }
                };
                groups.entry(task).or_default().push(r.clone());
            }
            let mut ids = Vec::new();
            for (task, group) in groups {
                let message = Message {
                    need_reply,
                    stage_relative: stage_id.clone().unwrap_or_else(|| NO_STAGE.to_string()),
                    ..Message::note(world.ids.message(), task, HUMAN_OPERATOR, group, content.clone())
                };
                ids.push(message.message_id.clone());
                messaging::enqueue(world, message)?;
            }
            Ok(Some(json!({ "message_ids": ids })))
        }
        InterventionCommand::EditAgentState { agent_id, changes } => {
            config::apply_patch(world, &agent_id, &changes, HUMAN_OPERATOR)?;
            Ok(None)
        }
        InterventionCommand::PauseAgent { agent_id } => {
            world.agent_mut(&agent_id)?.paused = true;
            world.emit(EventKind::AgentPaused { agent_id });
            Ok(None)
        }
        InterventionCommand::ResumeAgent { agent_id } => {
            world.agent_mut(&agent_id)?.paused = false;
            world.emit(EventKind::AgentResumed { agent_id });
            Ok(None)
        }
        InterventionCommand::EndStage { stage_id, outcome } => {
            if outcome == StageOutcome::Finished {
                let stage = world.stage(&stage_id)?;
                let missing: Vec<AgentId> = stage
                    .agent_allocation
                    .keys()
                    .filter(|a| !stage.completion_summaries.contains_key(*a))
                    .cloned()
                    .collect();
                if stage.status == Lifecycle::Running {
                    let stage = world.registry.stages.get_mut(&stage_id).expect("checked");
                    for agent in missing {
                        stage.completion_summaries.insert(agent, "(ended by operator)".into());
                    }
                }
            }
            sync::finish_stage(world, &stage_id, outcome, HUMAN_OPERATOR)?;
            Ok(None)
        }
        InterventionCommand::CancelTask { task_id } => {
            world.task(&task_id)?;
            state::lifecycle::finish_task(world, &task_id, Lifecycle::Failed, Some("cancelled by operator".into()))?;
            Ok(None)
        }
    }
}
