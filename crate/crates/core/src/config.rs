//! Agent configuration documents and agent-state patches.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::engine::{self, StepDraft};
use crate::error::{Error, Result};
use crate::event::EventKind;
use crate::ids::{is_reserved_sender, AgentId, StepId};
use crate::skills::SkillKind;
use crate::state::{AgentState, AgentStep, WorkingState};
use crate::world::World;

fn default_llm() -> String {
    "default".into()
}

/// An agent definition. Two agents built from equal configs differ only in
/// the state they later accumulate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub profile: String,
    #[serde(default)]
    pub skills: Vec<String>,
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default = "default_llm")]
    pub llm: String,
}

impl AgentConfig {
    pub fn validate(&self, world: &World) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("agent name is required".into()));
        }
        if is_reserved_sender(&self.name) {
            return Err(Error::Config(format!("`{}` is a reserved id", self.name)));
        }
        if world.registry.agents.contains_key(&self.name) {
            return Err(Error::DuplicateAgent(self.name.clone()));
        }
        check_skills(&self.skills)?;
        check_tools(world, &self.tools)?;
        if !world.backends.contains(&self.llm) {
            return Err(Error::Config(format!("unknown llm config `{}`", self.llm)));
        }
        Ok(())
    }

    pub fn into_state(self) -> AgentState {
        AgentState {
            agent_id: self.name.clone(),
            name: self.name,
            role: self.role,
            profile: self.profile,
            llm_config_ref: self.llm,
            skill_permissions: self.skills.into_iter().collect(),
            tool_permissions: self.tools.into_iter().collect(),
            persistent_memory: Default::default(),
            step_queue: AgentStep::default(),
            step_locks: BTreeSet::new(),
            task_refs: BTreeSet::new(),
            stage_refs: BTreeSet::new(),
            working_state: WorkingState::Idle,
            paused: false,
        }
    }
}

fn check_skills(skills: &[String]) -> Result<()> {
    match skills.iter().find(|s| SkillKind::parse(s).is_none()) {
        Some(unknown) => Err(Error::Config(format!("unknown skill `{unknown}`"))),
        None => Ok(()),
    }
}

fn check_tools(world: &World, tools: &[String]) -> Result<()> {
    match tools.iter().find(|t| !world.tool_servers.contains(*t)) {
        Some(unknown) => Err(Error::Config(format!("tool server `{unknown}` is not configured"))),
        None => Ok(()),
    }
}

/// Validates and registers an agent; its id is its name.
pub fn register_agent(world: &mut World, config: AgentConfig) -> Result<AgentId> {
    config.validate(world)?;
    let state = config.into_state();
    let id = state.agent_id.clone();
    world.registry.agents.insert(id.clone(), state);
    world.agent_order.push(id.clone());
    world.emit(EventKind::AgentSpawned { agent_id: id.clone() });
    Ok(id)
}

/// Externally writable agent fields: profile, role, permissions and queue.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentPatch {
    pub role: Option<String>,
    pub profile: Option<String>,
    pub add_skills: Vec<String>,
    pub remove_skills: Vec<String>,
    pub add_tools: Vec<String>,
    pub remove_tools: Vec<String>,
    pub remove_steps: Vec<StepId>,
    pub append_steps: Vec<StepDraft>,
    pub insert_steps: Vec<StepDraft>,
}

impl AgentPatch {
    pub fn is_empty(&self) -> bool {
        self == &AgentPatch::default()
    }
}

/// Applies `patch` to `agent_id` atomically: either every change lands or
/// none does.
pub fn apply_patch(world: &mut World, agent_id: &str, patch: &AgentPatch, origin: &str) -> Result<()> {
    check_skills(&patch.add_skills)?;
    check_tools(world, &patch.add_tools)?;
    let mut next = world.agent(agent_id)?.clone();
    for step_id in &patch.remove_steps {
        if !next.step_queue.todo.iter().any(|s| &s.step_id == step_id) {
            return Err(Error::Intervention(format!("no queued step `{step_id}` on {agent_id}")));
        }
    }
    for draft in patch.append_steps.iter().chain(&patch.insert_steps) {
        if draft.task_id.is_none() {
            return Err(Error::Intervention("queued step edits must name a task".into()));
        }
    }
    if let Some(role) = &patch.role {
        next.role = role.clone();
    }
    if let Some(profile) = &patch.profile {
        next.profile = profile.clone();
    }
    next.skill_permissions.extend(patch.add_skills.iter().cloned());
    for s in &patch.remove_skills {
        next.skill_permissions.remove(s);
    }
    next.tool_permissions.extend(patch.add_tools.iter().cloned());
    for t in &patch.remove_tools {
        next.tool_permissions.remove(t);
    }
    let drafts: Vec<StepDraft> = patch.insert_steps.iter().chain(&patch.append_steps).cloned().collect();
    engine::validate_drafts(world, &next, drafts)?;

    {
        let agent = world.agent_mut(agent_id)?;
        agent.role = next.role;
        agent.profile = next.profile;
        agent.skill_permissions = next.skill_permissions;
        agent.tool_permissions = next.tool_permissions;
    }
    let cause = format!("edit by {origin}");
    if !patch.remove_steps.is_empty() {
        engine::release_steps_where(world, agent_id, &cause, |s| patch.remove_steps.contains(&s.step_id));
    }
    if !patch.insert_steps.is_empty() {
        engine::insert_steps(world, agent_id, patch.insert_steps.clone(), &cause)?;
    }
    if !patch.append_steps.is_empty() {
        engine::append_steps(world, agent_id, patch.append_steps.clone(), &cause)?;
    }
    world.emit(EventKind::AgentModified {
        agent_id: agent_id.to_string(),
        origin: origin.to_string(),
    });
    Ok(())
}
