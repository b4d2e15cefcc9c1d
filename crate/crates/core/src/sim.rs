//! Random runtime transitions for invariant testing.
//!
//! A [`Transition`] is one externally triggerable change: spawning an agent,
//! starting a task, running a round, or an operator intervention. Targets are
//! picked by index into whatever exists when the transition is applied, so
//! any sequence is meaningful. Rejections are part of the game; the point is
//! that state stays consistent either way.

use rand::Rng;
use serde_json::json;

use crate::backend::ScriptedRule;
use crate::config::{AgentConfig, AgentPatch};
use crate::engine::StepDraft;
use crate::orchestrator::{InterventionCommand, Orchestrator, OrchestratorConfig};
use crate::sync::StageOutcome;
use crate::tools::ServerConfig;

/// Agents are drawn from a fixed pool of names so scripted replies can
/// address them. The first three form a crew present from the start and in
/// every task; the rest come and go through random spawns.
pub const POOL: [&str; 6] = ["R0", "R1", "R2", "R3", "R4", "R5"];
const CREW: usize = 3;

const SKILLS: [&str; 10] = [
    "task_manager",
    "agent_manager",
    "planning",
    "reflection",
    "summary",
    "quick_think",
    "send_message",
    "process_message",
    "decision",
    "instruction_generation",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    /// Spawns `POOL[slot]` with the skills selected by `skill_mask`; see
    /// [`apply`] for the baseline bit.
    Spawn { slot: usize, skill_mask: u16, tools: bool },
    StartTask { manager: usize, members: Vec<usize> },
    Round,
    Inject { receiver: usize, need_reply: bool },
    Pause { agent: usize },
    Resume { agent: usize },
    CancelTask { task: usize },
    EndStage { task: usize, failed: bool },
    AppendStep { agent: usize, executor: usize },
    DropStep { agent: usize },
}

impl Transition {
    pub fn random(rng: &mut impl Rng) -> Self {
        let pick = |rng: &mut dyn rand::RngCore| rng.random_range(0..8);
        match rng.random_range(0..20) {
            0..=2 => Transition::Spawn {
                slot: rng.random_range(0..POOL.len()),
                skill_mask: rng.random(),
                tools: rng.random(),
            },
            3..=4 => Transition::StartTask {
                manager: pick(rng),
                members: (0..rng.random_range(0..3)).map(|_| pick(rng)).collect(),
            },
            5..=12 => Transition::Round,
            13 => Transition::Inject {
                receiver: pick(rng),
                need_reply: rng.random(),
            },
            14 => Transition::Pause { agent: pick(rng) },
            15 => Transition::Resume { agent: pick(rng) },
            16 => Transition::CancelTask { task: pick(rng) },
            17 => Transition::EndStage {
                task: pick(rng),
                failed: rng.random(),
            },
            18 => Transition::AppendStep {
                agent: pick(rng),
                executor: rng.random_range(0..SKILLS.len()),
            },
            _ => Transition::DropStep { agent: pick(rng) },
        }
    }
}

/// Scripted replies that keep agents busy: stages get added, plans send
/// messages that want replies, reflections finish stages.
pub fn rules() -> Vec<ScriptedRule> {
    let rule = |skill: &str, reply: String| ScriptedRule {
        skill: skill.into(),
        pattern: String::new(),
        reply,
        agent: None,
    };
    let allocation: serde_json::Map<String, serde_json::Value> =
        POOL[..CREW].iter().map(|a| (a.to_string(), json!("help out"))).collect();
    let ask = |agent: &str, others: [&str; 2]| ScriptedRule {
        agent: Some(agent.into()),
        ..rule(
            "send_message",
            format!(
                "<message>{}</message>",
                json!({"receivers": others, "content": "status?", "need_reply": true})
            ),
        )
    };
    vec![
        ScriptedRule {
            pattern: "Task instruction:".into(),
            ..rule(
                "task_manager",
                format!(
                    "<control>{}</control>",
                    json!({"commands": [
                        {"op": "add_stage", "objective": "work", "allocation": allocation},
                        {"op": "next_stage"}
                    ]})
                ),
            )
        },
        rule("task_manager", "<control>{\"commands\":[]}</control>".into()),
        rule(
            "planning",
            "<planned_step>[{\"executor\":\"quick_think\",\"text\":\"a\"},{\"executor\":\"send_message\",\"text\":\"ask around\"},{\"executor\":\"reflection\"}]</planned_step>".into(),
        ),
        ScriptedRule {
            pattern: "Reply to".into(),
            ..rule("send_message", "<message>{\"receivers\":[\"R0\"],\"content\":\"sure\"}</message>".into())
        },
        ask("R0", ["R1", "R2"]),
        ask("R1", ["R0", "R2"]),
        ask("R2", ["R0", "R1"]),
        rule("send_message", "<message>{\"receivers\":[\"R0\"],\"content\":\"hello\"}</message>".into()),
        rule(
            "process_message",
            "Noted.\n<persistent_memory>[{\"add\":\"heard something\"}]</persistent_memory>".into(),
        ),
        rule("reflection", "<control>{\"verdict\":\"done\"}</control>".into()),
        rule("summary", "<control>{\"summary\":\"did my part\"}</control>".into()),
        rule("decision", "<planned_step>[{\"executor\":\"quick_think\",\"text\":\"now\"}]</planned_step>".into()),
        rule(
            "agent_manager",
            "<control>{\"commands\":[{\"op\":\"create_agent\",\"config\":{\"name\":\"R5\",\"role\":\"extra\",\"skills\":[\"process_message\",\"quick_think\"]}}]}</control>".into(),
        ),
        rule("quick_think", "ok".into()),
        rule("instruction_generation", "<control>{\"action\":\"list_capabilities\"}</control>".into()),
    ]
}

pub fn orchestrator() -> Orchestrator {
    let mut config = OrchestratorConfig {
        scripted_rules: rules(),
        default_reply: Some("ok".into()),
        ..Default::default()
    };
    config.tool_servers.insert("calculator".into(), ServerConfig::mock("calculator"));
    let o = Orchestrator::new(config).expect("fixture config is valid");
    for (i, name) in POOL[..CREW].iter().enumerate() {
        let mut skills: Vec<String> = SKILLS[2..8].iter().map(|s| s.to_string()).collect();
        if i == 0 {
            skills.extend(["task_manager".to_string(), "agent_manager".to_string()]);
        }
        o.spawn_agent(AgentConfig {
            name: name.to_string(),
            role: "crew".into(),
            profile: String::new(),
            skills,
            tools: vec![],
            llm: "default".into(),
        })
        .expect("crew config is valid");
    }
    o
}

fn nth<T: Clone>(items: &[T], i: usize) -> Option<T> {
    (!items.is_empty()).then(|| items[i % items.len()].clone())
}

/// Applies one transition. Returns whether the runtime accepted it.
pub fn apply(o: &Orchestrator, t: &Transition) -> bool {
    let agents: Vec<String> = o.world().agent_order.clone();
    let tasks: Vec<String> = o.world().registry.tasks.keys().cloned().collect();
    match t {
        Transition::Spawn { slot, skill_mask, tools } => {
            // The top bit off means "a working member": the skills a stage
            // plan needs are always there, the rest are random.
            let baseline = skill_mask & 0x8000 == 0;
            let skills = SKILLS
                .iter()
                .enumerate()
                .filter(|(i, _)| skill_mask & (1 << i) != 0 || (baseline && (2..8).contains(i)))
                .map(|(_, s)| s.to_string())
                .collect();
            let name = POOL[slot % POOL.len()];
            o.spawn_agent(AgentConfig {
                name: name.into(),
                role: "random".into(),
                profile: String::new(),
                skills,
                tools: if *tools { vec!["calculator".into()] } else { vec![] },
                llm: "default".into(),
            })
            .is_ok()
        }
        Transition::StartTask { manager, members } => {
            let Some(manager) = nth(&agents, *manager) else { return false };
            let mut group: Vec<String> = POOL[..CREW].iter().map(|s| s.to_string()).collect();
            group.extend(members.iter().filter_map(|m| nth(&agents, *m)));
            group.retain(|a| *a != manager);
            o.start_task("do some work", &manager, &group).is_ok()
        }
        Transition::Round => {
            o.round();
            true
        }
        Transition::Inject { receiver, need_reply } => {
            let Some(receiver) = nth(&agents, *receiver) else { return false };
            let task_id = o.world().agent(&receiver).ok().and_then(|a| a.task_refs.iter().next().cloned());
            o.intervene(InterventionCommand::InjectMessage {
                receivers: vec![receiver],
                content: "operator ping".into(),
                need_reply: *need_reply,
                task_id,
                stage_id: None,
            })
            .is_ok()
        }
        Transition::Pause { agent } | Transition::Resume { agent } => {
            let Some(agent_id) = nth(&agents, *agent) else { return false };
            let command = if matches!(t, Transition::Pause { .. }) {
                InterventionCommand::PauseAgent { agent_id }
            } else {
                InterventionCommand::ResumeAgent { agent_id }
            };
            o.intervene(command).is_ok()
        }
        Transition::CancelTask { task } => {
            let Some(task_id) = nth(&tasks, *task) else { return false };
            o.intervene(InterventionCommand::CancelTask { task_id }).is_ok()
        }
        Transition::EndStage { task, failed } => {
            let Some(task_id) = nth(&tasks, *task) else { return false };
            let Some(stage_id) = o.world().task(&task_id).ok().and_then(|t| t.current_stage_id().cloned()) else {
                return false;
            };
            let outcome = if *failed {
                StageOutcome::Failed
            } else {
                StageOutcome::Finished
            };
            o.intervene(InterventionCommand::EndStage { stage_id, outcome }).is_ok()
        }
        Transition::AppendStep { agent, executor } => {
            let Some(agent_id) = nth(&agents, *agent) else { return false };
            let Some(task_id) = o.world().agent(&agent_id).ok().and_then(|a| a.task_refs.iter().next().cloned()) else {
                return false;
            };
            let changes = AgentPatch {
                append_steps: vec![StepDraft {
                    task_id: Some(task_id),
                    ..StepDraft::skill(SKILLS[executor % SKILLS.len()], "operator step", "do it")
                }],
                ..Default::default()
            };
            o.intervene(InterventionCommand::EditAgentState { agent_id, changes }).is_ok()
        }
        Transition::DropStep { agent } => {
            let Some(agent_id) = nth(&agents, *agent) else { return false };
            let Some(step_id) = o
                .world()
                .agent(&agent_id)
                .ok()
                .and_then(|a| a.step_queue.todo.front().map(|s| s.step_id.clone()))
            else {
                return false;
            };
            let changes = AgentPatch {
                remove_steps: vec![step_id],
                ..Default::default()
            };
            o.intervene(InterventionCommand::EditAgentState { agent_id, changes }).is_ok()
        }
    }
}
