#![allow(dead_code)]

use std::collections::BTreeMap;

use stepwise_core::backend::ScriptedRule;
use stepwise_core::state::Lifecycle;
use stepwise_core::sync::{self, SyncInstruction};
use stepwise_core::tools::ServerConfig;
use stepwise_core::world::World;
use stepwise_core::{AgentConfig, Orchestrator, OrchestratorConfig};

pub const OPERATOR: &str = "human-operator";

pub fn rule(skill: &str, pattern: &str, reply: &str) -> ScriptedRule {
    ScriptedRule {
        skill: skill.into(),
        pattern: pattern.into(),
        reply: reply.into(),
        agent: None,
    }
}

pub fn agent_rule(agent: &str, skill: &str, pattern: &str, reply: &str) -> ScriptedRule {
    ScriptedRule {
        agent: Some(agent.into()),
        ..rule(skill, pattern, reply)
    }
}

pub fn agent(name: &str, skills: &[&str], tools: &[&str]) -> AgentConfig {
    AgentConfig {
        name: name.into(),
        role: format!("{name} role"),
        profile: String::new(),
        skills: skills.iter().map(|s| s.to_string()).collect(),
        tools: tools.iter().map(|s| s.to_string()).collect(),
        llm: "default".into(),
    }
}

pub fn config(rules: Vec<ScriptedRule>, default_reply: Option<&str>) -> OrchestratorConfig {
    let mut tool_servers = BTreeMap::new();
    for kind in ["calculator", "kvstore", "delay", "empty"] {
        tool_servers.insert(kind.to_string(), ServerConfig::mock(kind));
    }
    OrchestratorConfig {
        tool_servers,
        scripted_rules: rules,
        default_reply: default_reply.map(str::to_string),
        ..Default::default()
    }
}

pub fn orchestrator(rules: Vec<ScriptedRule>, default_reply: Option<&str>) -> Orchestrator {
    Orchestrator::new(config(rules, default_reply)).unwrap()
}

/// Adds the stages through the operator and returns their ids in order.
pub fn add_stages(world: &mut World, task_id: &str, stages: &[(&str, &[(&str, &str)])]) -> Vec<String> {
    let before = world.task(task_id).unwrap().stage_ids.len();
    let instructions = stages
        .iter()
        .map(|(objective, alloc)| SyncInstruction::AddStage {
            task_id: task_id.into(),
            objective: objective.to_string(),
            agent_allocation: alloc.iter().map(|(a, g)| (a.to_string(), g.to_string())).collect(),
        })
        .collect();
    for result in sync::apply(world, instructions, OPERATOR) {
        assert!(result.is_applied(), "{result:?}");
    }
    world.task(task_id).unwrap().stage_ids[before..].to_vec()
}

pub fn stage_status(world: &World, stage_id: &str) -> Lifecycle {
    world.stage(stage_id).unwrap().status
}

pub fn todo_executors(world: &World, agent_id: &str) -> Vec<String> {
    world
        .agent(agent_id)
        .unwrap()
        .step_queue
        .todo
        .iter()
        .map(|s| s.executor.clone())
        .collect()
}

pub fn history_executors(world: &World, agent_id: &str) -> Vec<String> {
    world
        .agent(agent_id)
        .unwrap()
        .step_queue
        .history
        .iter()
        .map(|s| s.executor.clone())
        .collect()
}
