//! Per-agent action loop.
//!
//! An action takes the head of the agent's todo queue, routes it to an
//! executor, and applies the executor's output: memory edits, new steps
//! (inserted at the head or appended at the tail), and finally one call into
//! the sync facade. Actions are split into [`begin_action`] and
//! [`finish_action`] so the slow part (backend or tool calls) can run without
//! holding the world lock.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::event::{ActionRecord, EventKind, Placement};
use crate::executor::{self, Services};
use crate::ids::{StageId, StepId, TaskId, WaitId, NO_STAGE};
use crate::messaging;
use crate::skills::{MemoryOp, SkillKind};
use crate::state::{AgentState, StageState, StepState, StepStatus, StepType, TaskState};
use crate::sync::{self, SyncInstruction};
use crate::world::World;

/// A step to be created. Missing task/stage default to those of the step
/// that produced the draft.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDraft {
    #[serde(alias = "intent", default)]
    pub step_intent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_type: Option<StepType>,
    pub executor: String,
    #[serde(alias = "text", default)]
    pub text_content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_id: Option<StageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_content: Option<Value>,
    #[serde(skip)]
    pub inbound: Option<crate::state::InboundRef>,
}

impl StepDraft {
    pub fn skill(executor: &str, intent: impl Into<String>, text: impl Into<String>) -> Self {
        StepDraft {
            step_intent: intent.into(),
            step_type: Some(StepType::Skill),
            executor: executor.to_string(),
            text_content: text.into(),
            ..Default::default()
        }
    }

    pub fn tool(server: &str, intent: impl Into<String>, text: impl Into<String>) -> Self {
        StepDraft {
            step_type: Some(StepType::Tool),
            ..StepDraft::skill(server, intent, text)
        }
    }

    pub fn resolved_type(&self) -> StepType {
        self.step_type.unwrap_or_else(|| {
            if SkillKind::parse(&self.executor).is_some() {
                StepType::Skill
            } else {
                StepType::Tool
            }
        })
    }

    pub fn with_defaults(mut self, task_id: &str, stage_id: &str) -> Self {
        self.task_id.get_or_insert_with(|| task_id.to_string());
        self.stage_id.get_or_insert_with(|| stage_id.to_string());
        self
    }
}

/// What an executor hands back to the engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutorOutput {
    pub result_text: String,
    /// `Some(reason)` marks the step failed; no other effect is applied.
    pub failure: Option<String>,
    pub append_steps: Vec<StepDraft>,
    pub insert_steps: Vec<StepDraft>,
    pub sync_instructions: Vec<SyncInstruction>,
    pub memory_ops: Vec<MemoryOp>,
    /// Instruction payload for the next todo step (instruction generation).
    pub next_tool_instruction: Option<Value>,
    pub decision: Option<String>,
    pub warnings: Vec<String>,
    pub tool_calls: Vec<crate::tools::ToolCallRecord>,
}

impl ExecutorOutput {
    pub fn finished(result: impl Into<String>) -> Self {
        ExecutorOutput {
            result_text: result.into(),
            ..Default::default()
        }
    }

    pub fn failed(reason: impl Into<String>) -> Self {
        let reason = reason.into();
        ExecutorOutput {
            result_text: reason.clone(),
            failure: Some(reason),
            ..Default::default()
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Everything an executor may look at, copied out of the world when the
/// action begins.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub tick: u64,
    pub step: StepState,
    pub agent: AgentState,
    pub task: Option<TaskState>,
    pub stage: Option<StageState>,
    pub task_stages: Vec<StageState>,
}

impl StepContext {
    /// History of the current step's stage (or of `no_stage` steps).
    pub fn stage_history(&self) -> impl DoubleEndedIterator<Item = &StepState> {
        self.agent
            .step_queue
            .history
            .iter()
            .filter(|s| s.stage_id == self.step.stage_id && s.task_id == self.step.task_id)
    }

    pub fn next_step(&self) -> Option<&StepState> {
        self.agent.step_queue.todo.front()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum ActionReport {
    Blocked { agent_id: String },
    Idle { agent_id: String },
    Paused { agent_id: String },
    Busy { agent_id: String },
    Executed(ActionRecord),
}

impl ActionReport {
    pub fn executed(&self) -> Option<&ActionRecord> {
        match self {
            ActionReport::Executed(record) => Some(record),
            _ => None,
        }
    }
}

fn materialize(world: &World, agent: &AgentState, drafts: Vec<StepDraft>) -> Result<Vec<StepState>> {
    let mut steps = Vec::with_capacity(drafts.len());
    for draft in drafts {
        let step_type = draft.resolved_type();
        if !agent.may_execute(step_type, &draft.executor) {
            return Err(Error::Permission(format!(
                "agent `{}` may not use {} `{}`",
                agent.agent_id,
                match step_type {
                    StepType::Skill => "skill",
                    StepType::Tool => "tool",
                },
                draft.executor
            )));
        }
        let task_id = draft
            .task_id
            .clone()
            .ok_or_else(|| Error::Protocol("step draft without task".into()))?;
        if !agent.task_refs.contains(&task_id) {
            return Err(Error::Protocol(format!(
                "agent `{}` is not in task `{task_id}`",
                agent.agent_id
            )));
        }
        let stage_id = draft.stage_id.clone().unwrap_or_else(|| NO_STAGE.to_string());
        if stage_id != NO_STAGE {
            match world.registry.stages.get(&stage_id) {
                Some(stage) if stage.task_id == task_id => {}
                _ => {
                    return Err(Error::Protocol(format!(
                        "stage `{stage_id}` is not part of task `{task_id}`"
                    )))
                }
            }
        }
        steps.push(StepState {
            step_id: String::new(),
            task_id,
            stage_id,
            agent_id: agent.agent_id.clone(),
            step_intent: draft.step_intent,
            step_type,
            executor: draft.executor,
            text_content: draft.text_content,
            instruction_content: draft.instruction_content,
            execute_result: None,
            status: StepStatus::Init,
            inbound: draft.inbound,
        });
    }
    Ok(steps)
}

/// Checks that `drafts` could be queued on `agent` (permissions, task
/// membership, stage ownership) without queuing them.
pub fn validate_drafts(world: &World, agent: &AgentState, drafts: Vec<StepDraft>) -> Result<()> {
    materialize(world, agent, drafts).map(|_| ())
}

fn add_steps(
    world: &mut World,
    agent_id: &str,
    drafts: Vec<StepDraft>,
    placement: Placement,
    cause: &str,
) -> Result<Vec<StepId>> {
    let mut steps = materialize(world, world.agent(agent_id)?, drafts)?;
    for step in &mut steps {
        step.step_id = world.ids.step();
    }
    let ids: Vec<StepId> = steps.iter().map(|s| s.step_id.clone()).collect();
    for step in &steps {
        world.emit(EventKind::StepAdded {
            agent_id: agent_id.to_string(),
            step_id: step.step_id.clone(),
            executor: step.executor.clone(),
            task_id: step.task_id.clone(),
            stage_id: step.stage_id.clone(),
            placement,
            cause: cause.to_string(),
        });
    }
    let todo = &mut world.agent_mut(agent_id)?.step_queue.todo;
    match placement {
        Placement::Append => todo.extend(steps),
        Placement::Insert => {
            for step in steps.into_iter().rev() {
                todo.push_front(step);
            }
        }
    }
    Ok(ids)
}

/// Appends drafts at the tail of the todo queue, in order. The batch is
/// rejected as a whole if any draft is not permitted.
pub fn append_steps(world: &mut World, agent_id: &str, drafts: Vec<StepDraft>, cause: &str) -> Result<Vec<StepId>> {
    add_steps(world, agent_id, drafts, Placement::Append, cause)
}

/// Places drafts ahead of every pending step, keeping their relative order.
pub fn insert_steps(world: &mut World, agent_id: &str, drafts: Vec<StepDraft>, cause: &str) -> Result<Vec<StepId>> {
    add_steps(world, agent_id, drafts, Placement::Insert, cause)
}

/// Drops todo steps matching `pred`; a matching running step is flagged so
/// its output is discarded. Reply steps owing a wait id release the waiting
/// sender.
pub(crate) fn release_steps_where(
    world: &mut World,
    agent_id: &str,
    scope: &str,
    pred: impl Fn(&StepState) -> bool,
) -> usize {
    let Some(agent) = world.registry.agents.get_mut(agent_id) else {
        return 0;
    };
    let queue = &mut agent.step_queue;
    let (dropped, kept): (Vec<StepState>, Vec<StepState>) = queue.todo.drain(..).partition(|s| pred(s));
    queue.todo = kept.into();
    if queue.current.as_ref().is_some_and(&pred) {
        queue.current_released = true;
    }
    if dropped.is_empty() {
        return 0;
    }
    let owed: Vec<WaitId> = dropped
        .iter()
        .filter_map(|s| s.inbound.as_ref().and_then(|i| i.wait_id.clone()))
        .collect();
    world.emit(EventKind::StepsReleased {
        agent_id: agent_id.to_string(),
        scope: scope.to_string(),
        step_ids: dropped.iter().map(|s| s.step_id.clone()).collect(),
    });
    for w in owed {
        messaging::release_wait(world, &w, "reply step released");
    }
    dropped.len()
}

/// Removes every todo step bound to `stage_id`. History is untouched.
pub fn release_stage_steps(world: &mut World, agent_id: &str, stage_id: &str) -> usize {
    release_steps_where(world, agent_id, stage_id, |s| s.stage_id == stage_id)
}

/// Removes every todo step of `task_id`, including its `no_stage` steps.
pub fn release_task_steps(world: &mut World, agent_id: &str, task_id: &str) -> usize {
    release_steps_where(world, agent_id, task_id, |s| s.task_id == task_id)
}

pub fn acquire_locks(world: &mut World, agent_id: &str, wait_ids: &[WaitId]) -> Result<()> {
    let agent = world.agent_mut(agent_id)?;
    if let Some(dup) = wait_ids.iter().find(|w| agent.step_locks.contains(*w)) {
        return Err(Error::Protocol(format!("lock `{dup}` already held")));
    }
    agent.step_locks.extend(wait_ids.iter().cloned());
    agent.recompute_working_state();
    world.emit(EventKind::LockAcquired {
        agent_id: agent_id.to_string(),
        wait_ids: wait_ids.to_vec(),
    });
    Ok(())
}

/// Releases one lock. Unknown ids are ignored with a warning record.
pub fn release_lock(world: &mut World, agent_id: &str, wait_id: &str, reason: &str) -> bool {
    let released = match world.registry.agents.get_mut(agent_id) {
        Some(agent) => {
            let removed = agent.step_locks.remove(wait_id);
            if removed {
                agent.recompute_working_state();
            }
            removed
        }
        None => false,
    };
    world.emit(if released {
        EventKind::LockReleased {
            agent_id: agent_id.to_string(),
            wait_id: wait_id.to_string(),
            reason: reason.to_string(),
        }
    } else {
        EventKind::LockReleaseIgnored {
            agent_id: agent_id.to_string(),
            wait_id: wait_id.to_string(),
        }
    });
    released
}

/// Moves the head step to running and captures its context.
pub fn begin_action(world: &mut World, agent_id: &str) -> std::result::Result<StepContext, ActionReport> {
    let tick = world.tick;
    let id = agent_id.to_string();
    let Some(agent) = world.registry.agents.get_mut(agent_id) else {
        return Err(ActionReport::Idle { agent_id: id });
    };
    if agent.paused {
        return Err(ActionReport::Paused { agent_id: id });
    }
    if !agent.step_locks.is_empty() {
        return Err(ActionReport::Blocked { agent_id: id });
    }
    if agent.step_queue.current.is_some() {
        return Err(ActionReport::Busy { agent_id: id });
    }
    let Some(mut step) = agent.step_queue.todo.pop_front() else {
        return Err(ActionReport::Idle { agent_id: id });
    };
    if step.status == StepStatus::Init {
        step.transition(StepStatus::Pending);
    }
    step.transition(StepStatus::Running);
    agent.step_queue.current = Some(step.clone());
    agent.step_queue.current_released = false;
    agent.recompute_working_state();
    let agent = agent.clone();

    let task = world.registry.tasks.get(&step.task_id).cloned();
    let stage = world.registry.stages.get(&step.stage_id).cloned();
    let task_stages = task
        .as_ref()
        .map(|t| {
            t.stage_ids
                .iter()
                .filter_map(|s| world.registry.stages.get(s).cloned())
                .collect()
        })
        .unwrap_or_default();
    Ok(StepContext {
        tick,
        step,
        agent,
        task,
        stage,
        task_stages,
    })
}

fn apply_memory_ops(world: &mut World, agent_id: &str, ops: &[MemoryOp]) {
    for op in ops {
        match op {
            MemoryOp::Add(text) => {
                let key = world.memory_key(agent_id);
                if let Some(agent) = world.registry.agents.get_mut(agent_id) {
                    agent.persistent_memory.insert(key.clone(), text.clone());
                    world.emit(EventKind::MemoryAdded {
                        agent_id: agent_id.to_string(),
                        key,
                    });
                }
            }
            MemoryOp::Delete(key) => {
                let removed = world
                    .registry
                    .agents
                    .get_mut(agent_id)
                    .and_then(|a| a.persistent_memory.remove(key))
                    .is_some();
                if removed {
                    world.emit(EventKind::MemoryDeleted {
                        agent_id: agent_id.to_string(),
                        key: key.clone(),
                    });
                } else {
                    world.warn(Some(agent_id), format!("memory delete of unknown key `{key}`"));
                }
            }
        }
    }
}

/// Applies `output` for the step captured in `ctx` and records the action.
pub fn finish_action(world: &mut World, ctx: &StepContext, mut output: ExecutorOutput) -> ActionRecord {
    let agent_id = ctx.agent.agent_id.as_str();
    for warning in std::mem::take(&mut output.warnings) {
        world.warn(Some(agent_id), warning);
    }
    for call in &output.tool_calls {
        world.emit(EventKind::ToolCall {
            agent_id: agent_id.to_string(),
            server: call.server.clone(),
            capability: call.capability.clone(),
            latency_ms: call.latency_ms,
            ok: call.ok,
            error: call.error.clone(),
        });
    }

    let released = world
        .registry
        .agents
        .get(agent_id)
        .is_some_and(|a| a.step_queue.current_released);
    if released && output.failure.is_none() {
        output = ExecutorOutput {
            failure: Some("step released before completion".into()),
            result_text: output.result_text,
            decision: output.decision,
            ..Default::default()
        };
    }

    if output.failure.is_none() {
        if let Err(err) = validate_effects(world, ctx, &output) {
            output = ExecutorOutput::failed(err.to_string());
        }
    }

    if output.failure.is_none() {
        apply_memory_ops(world, agent_id, &output.memory_ops);
        if let Some(instruction) = output.next_tool_instruction.take() {
            if let Some(next) = world
                .registry
                .agents
                .get_mut(agent_id)
                .and_then(|a| a.step_queue.todo.front_mut())
            {
                next.instruction_content = Some(instruction);
            }
        }
        let step_defaults = |d: StepDraft| d.with_defaults(&ctx.step.task_id, &ctx.step.stage_id);
        let cause = format!("{} {}", ctx.step.executor, ctx.step.step_id);
        let inserts: Vec<StepDraft> = output.insert_steps.drain(..).map(step_defaults).collect();
        let appends: Vec<StepDraft> = output.append_steps.drain(..).map(step_defaults).collect();
        // Both batches were validated above, so these cannot fail.
        if !inserts.is_empty() {
            insert_steps(world, agent_id, inserts, &cause).expect("validated insert");
        }
        if !appends.is_empty() {
            append_steps(world, agent_id, appends, &cause).expect("validated append");
        }
    }

    let mut step = ctx.step.clone();
    let status = if output.failure.is_some() {
        StepStatus::Failed
    } else {
        StepStatus::Finished
    };
    step.transition(status);
    step.execute_result = Some(output.result_text.clone());
    if let Some(agent) = world.registry.agents.get_mut(agent_id) {
        agent.step_queue.current = None;
        agent.step_queue.current_released = false;
        agent.step_queue.history.push(step.clone());
        agent.recompute_working_state();
    }

    // A reply that will never be sent must not leave its sender locked.
    if status == StepStatus::Failed {
        if let Some(w) = step.inbound.as_ref().and_then(|i| i.wait_id.clone()) {
            messaging::release_wait(world, &w, "reply step failed");
        }
    }

    let kinds: Vec<String> = output
        .sync_instructions
        .iter()
        .map(|i| i.kind().to_string())
        .collect();
    if output.failure.is_none() {
        sync::apply(world, std::mem::take(&mut output.sync_instructions), agent_id);
    }
    let record = ActionRecord {
        agent_id: agent_id.to_string(),
        step_id: step.step_id.clone(),
        executor: step.executor.clone(),
        status,
        sync_instruction_kinds: if output.failure.is_none() { kinds } else { Vec::new() },
        task_id: step.task_id.clone(),
        stage_id: step.stage_id.clone(),
        decision: output.decision.clone(),
        error: output.failure.clone(),
    };
    world.emit(EventKind::Action(record.clone()));
    record
}

fn validate_effects(world: &World, ctx: &StepContext, output: &ExecutorOutput) -> Result<()> {
    let agent = world.agent(&ctx.agent.agent_id)?;
    let defaults = |d: &StepDraft| d.clone().with_defaults(&ctx.step.task_id, &ctx.step.stage_id);
    materialize(world, agent, output.insert_steps.iter().map(defaults).collect())?;
    materialize(world, agent, output.append_steps.iter().map(defaults).collect())?;
    if output.next_tool_instruction.is_some() {
        match agent.step_queue.todo.front() {
            Some(next) if next.step_type == StepType::Tool => {}
            _ => return Err(Error::Protocol("next step is not a tool step".into())),
        }
    }
    Ok(())
}

/// One complete action for `agent_id`: begin, execute, finish.
pub fn next_action(world: &mut World, services: &Services, agent_id: &str) -> ActionReport {
    match begin_action(world, agent_id) {
        Err(report) => report,
        Ok(ctx) => {
            let output = executor::route(&ctx, services);
            ActionReport::Executed(finish_action(world, &ctx, output))
        }
    }
}
