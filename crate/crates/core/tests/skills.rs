mod common;

use std::path::PathBuf;

use common::*;
use serde_json::json;
use stepwise_core::backend::ScriptedRule;
use stepwise_core::engine::{self, StepDraft};
use stepwise_core::event::{ActionRecord, EventKind, Outcome};
use stepwise_core::ids::NO_STAGE;
use stepwise_core::skills::{ParsedSkillOutput, SkillKind};
use stepwise_core::state::{self, Lifecycle, StepStatus, StepType, WorkingState};
use stepwise_core::tools::ToolInstruction;
use stepwise_core::Orchestrator;

const ALL: &[&str] = &[
    "planning",
    "reflection",
    "summary",
    "instruction_generation",
    "think",
    "quick_think",
    "send_message",
    "process_message",
    "ask_info",
    "tool_decision",
    "decision",
];

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden(skill: &str) -> String {
    std::fs::read_to_string(golden_dir().join(format!("replies/{skill}.txt"))).unwrap()
}

fn golden_rule(skill: &str) -> ScriptedRule {
    rule(skill, "", &golden(skill))
}

struct Bench {
    o: Orchestrator,
    t: String,
    s: String,
}

/// M manages; W and W2 are workers. The stage allocates `alloc` and is
/// running, with the opening planning steps cleared away.
fn bench(rules: Vec<ScriptedRule>, alloc: &[&str]) -> Bench {
    let o = orchestrator(rules, Some("ok"));
    o.spawn_agent(agent("M", &["task_manager", "agent_manager", "think"], &[])).unwrap();
    o.spawn_agent(agent("W", ALL, &["calculator", "kvstore"])).unwrap();
    o.spawn_agent(agent("W2", ALL, &[])).unwrap();
    let (t, s) = {
        let mut w = o.world();
        let t = state::new_task(&mut w, "add 1 and 2", &["M".into(), "W".into(), "W2".into()]).unwrap();
        let allocation: Vec<(&str, &str)> = alloc.iter().map(|a| (*a, "do your part")).collect();
        let s = add_stages(&mut w, &t, &[("compute", &allocation)]).remove(0);
        state::advance_stage(&mut w, &t).unwrap();
        for a in ["W", "W2"] {
            w.agent_mut(a).unwrap().step_queue.todo.clear();
        }
        (t, s)
    };
    Bench { o, t, s }
}

impl Bench {
    fn push(&self, agent: &str, executor: &str, stage: &str, text: &str) -> String {
        let draft = StepDraft {
            task_id: Some(self.t.clone()),
            stage_id: Some(stage.into()),
            ..StepDraft::skill(executor, text, text)
        };
        engine::append_steps(&mut self.o.world(), agent, vec![draft], "test").unwrap()[0].clone()
    }

    fn push_tool(&self, agent: &str, server: &str, instruction: Option<serde_json::Value>) -> String {
        let draft = StepDraft {
            task_id: Some(self.t.clone()),
            stage_id: Some(self.s.clone()),
            instruction_content: instruction,
            ..StepDraft::tool(server, "use the tool", "")
        };
        engine::append_steps(&mut self.o.world(), agent, vec![draft], "test").unwrap()[0].clone()
    }

    fn act(&self, agent: &str) -> ActionRecord {
        let mut w = self.o.world();
        engine::next_action(&mut w, self.o.services(), agent)
            .executed()
            .cloned()
            .expect("an action ran")
    }

    fn dispatch(&self) {
        let mut w = self.o.world();
        stepwise_core::messaging::dispatch_pending(&mut w, &self.t).unwrap();
    }

    fn todo(&self, agent: &str) -> Vec<String> {
        todo_executors(&self.o.world(), agent)
    }

    fn last_result(&self, agent: &str) -> String {
        let w = self.o.world();
        let h = &w.agent(agent).unwrap().step_queue.history;
        h.last().unwrap().execute_result.clone().unwrap_or_default()
    }

    fn sync_outcomes(&self, kind: &str) -> Vec<Outcome> {
        self.o
            .world()
            .log
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Sync { kind: k, outcome, .. } if k == kind => Some(*outcome),
                _ => None,
            })
            .collect()
    }
}

#[test]
fn every_golden_reply_parses_cleanly() {
    for name in ALL.iter().chain(&["task_manager", "agent_manager"]) {
        let parsed = ParsedSkillOutput::parse(&golden(name));
        assert!(parsed.errors.is_empty(), "{name}: {:?}", parsed.errors);
        assert!(parsed.warnings.is_empty(), "{name}: {:?}", parsed.warnings);
    }
}

#[test]
fn memory_golden_blocks() {
    use stepwise_core::skills::MemoryOp;
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let add = std::fs::read_to_string(dir.join("memory_add.txt")).unwrap();
    let parsed = ParsedSkillOutput::parse(&add);
    assert_eq!(parsed.memory_ops, [MemoryOp::Add("Persistent memory content to append".into())]);
    assert!(parsed.warnings.is_empty());
    let delete = std::fs::read_to_string(dir.join("memory_delete.txt")).unwrap();
    let parsed = ParsedSkillOutput::parse(&delete);
    assert_eq!(
        parsed.memory_ops,
        [MemoryOp::Delete("Timestamps for permanent memory deletion".into())]
    );
}

#[test]
fn planning_appends_the_plan_in_order() {
    let b = bench(vec![golden_rule("planning")], &["W"]);
    b.push("W", "planning", &b.s, "plan");
    assert_eq!(b.act("W").status, StepStatus::Finished);
    // Oracle: the three drafts of the golden reply, read by hand.
    let w = b.o.world();
    let todo: Vec<(&str, StepType, &str)> = w
        .agent("W")
        .unwrap()
        .step_queue
        .todo
        .iter()
        .map(|s| (s.executor.as_str(), s.step_type, s.step_intent.as_str()))
        .collect();
    assert_eq!(
        todo,
        [
            ("think", StepType::Skill, "restate the problem"),
            ("calculator", StepType::Tool, "add the numbers"),
            ("reflection", StepType::Skill, "check progress")
        ]
    );
}

#[test]
fn planning_queues_the_plan_behind_pending_steps() {
    let b = bench(vec![golden_rule("planning")], &["W"]);
    b.push("W", "planning", &b.s, "plan");
    b.push("W", "quick_think", &b.s, "pending");
    b.act("W");
    assert_eq!(b.todo("W"), ["quick_think", "think", "calculator", "reflection"]);
}

#[test]
fn planning_never_plans_a_summary() {
    let reply = r#"<planned_step>[{"executor":"think","text":"a"},{"executor":"summary","text":"b"}]</planned_step>"#;
    let b = bench(vec![rule("planning", "", reply)], &["W"]);
    b.push("W", "planning", &b.s, "plan");
    b.act("W");
    assert_eq!(b.todo("W"), ["think"]);
    let w = b.o.world();
    assert!(w
        .log
        .events()
        .iter()
        .any(|e| matches!(&e.kind, EventKind::Warning { message, .. } if message.contains("summary"))));
}

#[test]
fn an_empty_plan_adds_nothing() {
    let b = bench(vec![rule("planning", "", "<planned_step>[]</planned_step>")], &["W"]);
    b.push("W", "planning", &b.s, "plan");
    assert_eq!(b.act("W").status, StepStatus::Finished);
    assert!(b.todo("W").is_empty());
}

#[test]
fn reflection_done_appends_one_summary() {
    let b = bench(
        vec![rule("planning", "", "<planned_step>[]</planned_step>"), golden_rule("reflection")],
        &["W"],
    );
    b.push("W", "planning", &b.s, "plan");
    b.push("W", "reflection", &b.s, "check");
    b.act("W");
    let record = b.act("W");
    assert_eq!(record.decision.as_deref(), Some("done"));
    assert_eq!(b.todo("W"), ["summary"]);
}

#[test]
fn reflection_adjust_appends_the_new_plan() {
    let adjust = r#"<control>{"verdict":"adjust"}</control><planned_step>[{"executor":"think","text":"x"},{"executor":"quick_think","text":"y"}]</planned_step>"#;
    let b = bench(
        vec![rule("planning", "", "<planned_step>[]</planned_step>"), rule("reflection", "", adjust)],
        &["W"],
    );
    b.push("W", "planning", &b.s, "plan");
    b.push("W", "reflection", &b.s, "check");
    b.act("W");
    b.act("W");
    assert_eq!(b.todo("W"), ["think", "quick_think"]);
}

#[test]
fn reflection_without_a_plan_fails() {
    let b = bench(vec![golden_rule("reflection")], &["W"]);
    b.push("W", "reflection", &b.s, "check");
    let record = b.act("W");
    assert_eq!(record.status, StepStatus::Failed);
    assert!(record.error.unwrap().contains("planning"));
}

#[test]
fn last_summary_finishes_the_stage_and_the_task() {
    let b = bench(vec![golden_rule("summary")], &["W"]);
    b.push("W", "summary", &b.s, "sum up");
    let record = b.act("W");
    assert_eq!(record.sync_instruction_kinds, ["update_stage_completion", "finish_stage"]);
    let w = b.o.world();
    // One stage only, so finishing it disbands the task.
    assert!(w.registry.tasks.is_empty());
    assert_eq!(w.outcomes[&b.t].status, Lifecycle::Finished);
}

#[test]
fn first_of_two_summaries_leaves_the_stage_running() {
    let b = bench(vec![golden_rule("summary")], &["W", "W2"]);
    b.push("W", "summary", &b.s, "sum up");
    let record = b.act("W");
    assert_eq!(record.sync_instruction_kinds, ["update_stage_completion"]);
    let w = b.o.world();
    let stage = w.stage(&b.s).unwrap();
    assert_eq!(stage.status, Lifecycle::Running);
    assert_eq!(stage.completion_summaries["W"], "Computed 1 + 2 = 3 with the calculator.");
}

#[test]
fn summary_outside_a_stage_fails() {
    let b = bench(vec![golden_rule("summary")], &["W"]);
    b.push("W", "summary", NO_STAGE, "sum up");
    assert_eq!(b.act("W").status, StepStatus::Failed);
}

#[test]
fn instruction_generation_fills_the_next_tool_step() {
    let b = bench(vec![golden_rule("instruction_generation")], &["W"]);
    b.push("W", "instruction_generation", &b.s, "write the call");
    b.push_tool("W", "calculator", None);
    assert_eq!(b.act("W").status, StepStatus::Finished);
    let w = b.o.world();
    let next = &w.agent("W").unwrap().step_queue.todo[0];
    let instruction: ToolInstruction = serde_json::from_value(next.instruction_content.clone().unwrap()).unwrap();
    assert_eq!(
        instruction,
        ToolInstruction::Call {
            capability: "add".into(),
            arguments: json!({"a": 1, "b": 2})
        }
    );
}

#[test]
fn instruction_generation_needs_a_following_tool_step() {
    let b = bench(vec![golden_rule("instruction_generation")], &["W"]);
    b.push("W", "instruction_generation", &b.s, "nothing follows");
    assert_eq!(b.act("W").status, StepStatus::Failed);
    b.push("W", "instruction_generation", &b.s, "a skill follows");
    b.push("W", "think", &b.s, "x");
    assert_eq!(b.act("W").status, StepStatus::Failed);
}

#[test]
fn quick_think_returns_the_reply() {
    let b = bench(vec![rule("quick_think", "say hi", &golden("quick_think"))], &["W"]);
    b.push("W", "quick_think", &b.s, "say hi");
    b.act("W");
    assert_eq!(b.last_result("W"), "hi");
}

fn render(bundle: &stepwise_core::skills::PromptBundle) -> String {
    format!(
        "=== system ===\n{}\n=== context ===\n{}=== instruction ===\n{}\n",
        bundle.system_text, bundle.context_text, bundle.instruction_text
    )
}

#[test]
fn think_prompt_matches_golden() {
    let b = bench(
        vec![
            rule("quick_think", "alpha", "result of alpha"),
            rule("quick_think", "beta", "result of beta"),
        ],
        &["W"],
    );
    b.push("W", "quick_think", &b.s, "alpha");
    b.push("W", "quick_think", &b.s, "beta");
    b.push("W", "think", &b.s, "Combine what you found.");
    b.act("W");
    b.act("W");
    let mut w = b.o.world();
    let ctx = engine::begin_action(&mut w, "W").unwrap();
    let prompt = render(&b.o.services().templates.build(SkillKind::Think, &ctx, 20));
    assert!(prompt.contains("result of alpha") && prompt.contains("result of beta"));
    let path = golden_dir().join("think_prompt.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &prompt).unwrap();
    }
    assert_eq!(prompt, std::fs::read_to_string(&path).unwrap());
}

#[test]
fn think_and_quick_think_differ_only_in_the_header_without_history() {
    let b = bench(vec![], &["W"]);
    b.push("W", "think", &b.s, "Consider the task.");
    let mut w = b.o.world();
    let ctx = engine::begin_action(&mut w, "W").unwrap();
    let templates = &b.o.services().templates;
    let think = templates.build(SkillKind::Think, &ctx, 20);
    let quick = templates.build(SkillKind::QuickThink, &ctx, 20);
    assert_eq!(think.system_text, quick.system_text);
    assert_eq!(think.context_text, quick.context_text);
    let (t_head, t_rest) = think.instruction_text.split_once('\n').unwrap();
    let (q_head, q_rest) = quick.instruction_text.split_once('\n').unwrap();
    assert_ne!(t_head, q_head);
    assert_eq!(t_rest, q_rest);
}

#[test]
fn quick_think_sees_no_history() {
    let b = bench(vec![rule("quick_think", "alpha", "result of alpha")], &["W"]);
    b.push("W", "quick_think", &b.s, "alpha");
    b.push("W", "quick_think", &b.s, "again");
    b.act("W");
    let mut w = b.o.world();
    let ctx = engine::begin_action(&mut w, "W").unwrap();
    let bundle = b.o.services().templates.build(SkillKind::QuickThink, &ctx, 20);
    assert!(!bundle.context_text.contains("result of alpha"));
}

#[test]
fn every_prompt_carries_the_memory_contract() {
    let b = bench(vec![], &["W"]);
    b.push("W", "think", &b.s, "x");
    let mut w = b.o.world();
    let ctx = engine::begin_action(&mut w, "W").unwrap();
    let templates = &b.o.services().templates;
    let contract = templates.get("memory_contract").trim_end().to_string();
    assert!(contract.contains("<persistent_memory>"));
    for kind in SkillKind::ALL {
        assert!(templates.build(kind, &ctx, 20).instruction_text.ends_with(&contract), "{kind}");
    }
}

#[test]
fn one_way_send_emits_one_message_and_no_locks() {
    let b = bench(vec![golden_rule("send_message")], &["W"]);
    b.push("W", "send_message", &b.s, "tell W2");
    let record = b.act("W");
    assert_eq!(record.sync_instruction_kinds, ["send_message"]);
    let w = b.o.world();
    assert!(w.agent("W").unwrap().step_locks.is_empty());
    let q = &w.task(&b.t).unwrap().comm_queue;
    assert_eq!(q.len(), 1);
    assert!(!q[0].need_reply && q[0].waiting.is_none());
}

#[test]
fn waiting_send_to_two_receivers_blocks_on_two_ids() {
    let reply = r#"<message>{"receivers":["W2","M"],"content":"status?","waiting":true}</message>"#;
    let b = bench(vec![rule("send_message", "", reply)], &["W"]);
    b.push("W", "send_message", &b.s, "ask both");
    b.act("W");
    let w = b.o.world();
    let agent = w.agent("W").unwrap();
    assert_eq!(agent.working_state, WorkingState::Waiting);
    let locks: Vec<&String> = agent.step_locks.iter().collect();
    assert_eq!(locks.len(), 2);
    assert!(locks.iter().any(|l| l.ends_with("-W2")) && locks.iter().any(|l| l.ends_with("-M")));
    let m = &w.task(&b.t).unwrap().comm_queue[0];
    assert!(m.need_reply);
    assert_eq!(m.waiting.as_ref().unwrap().len(), 2);
}

#[test]
fn insufficient_send_inserts_a_decision_first() {
    let b = bench(
        vec![
            rule("send_message", "", r#"<control>{"sufficient":false}</control>"#),
            rule("decision", "", "<planned_step>[]</planned_step>"),
        ],
        &["W"],
    );
    b.push("W", "send_message", &b.s, "tell W2");
    b.push("W", "think", &b.s, "later");
    b.act("W");
    assert_eq!(b.todo("W"), ["decision", "send_message", "think"]);
    b.act("W");
    // The re-queued send is still insufficient; it fails rather than loop.
    assert_eq!(b.act("W").status, StepStatus::Failed);
    assert_eq!(b.todo("W"), ["think"]);
}

#[test]
fn send_to_an_outsider_fails() {
    let b = bench(vec![rule("send_message", "", r#"<message>{"receivers":["Z"],"content":"hi"}</message>"#)], &["W"]);
    b.push("W", "send_message", &b.s, "tell Z");
    let record = b.act("W");
    assert_eq!(record.status, StepStatus::Failed);
    assert!(b.o.world().task(&b.t).unwrap().comm_queue.is_empty());
}

#[test]
fn process_message_noted_adds_nothing() {
    let b = bench(vec![rule("process_message", "", "noted")], &["W"]);
    b.push("W", "process_message", NO_STAGE, "Message from W2:\nfyi");
    assert_eq!(b.act("W").status, StepStatus::Finished);
    assert!(b.todo("W").is_empty());
}

#[test]
fn process_message_reaction_inserts_a_decision() {
    let b = bench(vec![rule("process_message", "", r#"<control>{"react":true}</control>"#)], &["W"]);
    b.push("W", "process_message", NO_STAGE, "Message from W2:\nurgent");
    b.push("W", "think", &b.s, "later");
    b.act("W");
    assert_eq!(b.todo("W"), ["decision", "think"]);
}

#[test]
fn process_message_memory_add_grows_memory_by_one() {
    let b = bench(vec![golden_rule("process_message")], &["W"]);
    b.push("W", "process_message", NO_STAGE, "Message from W2:\nsum is 3");
    let before = b.o.world().agent("W").unwrap().persistent_memory.clone();
    b.act("W");
    let w = b.o.world();
    let after = &w.agent("W").unwrap().persistent_memory;
    let new: Vec<(&String, &String)> = after.iter().filter(|(k, _)| !before.contains_key(*k)).collect();
    assert_eq!(new.len(), 1);
    assert_eq!(new[0].1, "W2 reported the sum is 3");
    assert!(stepwise_core::clock::parse_compact(new[0].0).is_some());
}

#[test]
fn memory_delete_after_add_applies_in_order() {
    let b = bench(vec![golden_rule("process_message")], &["W"]);
    b.push("W", "process_message", NO_STAGE, "first");
    b.act("W");
    let key = b.o.world().agent("W").unwrap().persistent_memory.keys().next().unwrap().clone();
    let reply = format!(
        "<persistent_memory>[{{\"add\":\"newer\"}},{{\"delete\":\"{key}\"}}]</persistent_memory>"
    );
    let b2 = bench(vec![rule("process_message", "", &reply)], &["W"]);
    {
        let mut w = b2.o.world();
        w.agent_mut("W").unwrap().persistent_memory.insert(key.clone(), "old".into());
    }
    b2.push("W", "process_message", NO_STAGE, "second");
    b2.act("W");
    let w = b2.o.world();
    let memory: Vec<&String> = w.agent("W").unwrap().persistent_memory.values().collect();
    assert_eq!(memory, ["newer"]);
}

#[test]
fn task_manager_adds_two_stages_in_order() {
    let b = bench(vec![golden_rule("task_manager")], &["W"]);
    b.push("M", "task_manager", NO_STAGE, "organise");
    let before = b.o.world().task(&b.t).unwrap().stage_ids.clone();
    let record = b.act("M");
    assert_eq!(record.sync_instruction_kinds, ["add_stage", "add_stage"]);
    let w = b.o.world();
    let task = w.task(&b.t).unwrap();
    let objectives: Vec<&str> = task.stage_ids[before.len()..]
        .iter()
        .map(|s| w.stage(s).unwrap().objective.as_str())
        .collect();
    assert_eq!(objectives, ["compute the sum", "report the sum"]);
}

#[test]
fn task_manager_finish_on_a_running_stage_is_rejected() {
    let b = bench(vec![rule("task_manager", "", r#"<control>{"commands":[{"op":"finish_task"}]}</control>"#)], &["W"]);
    b.push("M", "task_manager", NO_STAGE, "wrap up");
    assert_eq!(b.act("M").status, StepStatus::Finished);
    assert_eq!(b.sync_outcomes("finish_task"), [Outcome::Rejected]);
    assert!(b.o.world().registry.tasks.contains_key(&b.t));
}

#[test]
fn worker_routed_to_task_manager_fails_on_permission() {
    let b = bench(vec![golden_rule("task_manager")], &["W"]);
    {
        let mut w = b.o.world();
        w.agent_mut("W").unwrap().skill_permissions.insert("task_manager".into());
    }
    b.push("W", "task_manager", NO_STAGE, "organise");
    b.o.world().agent_mut("W").unwrap().skill_permissions.remove("task_manager");
    let record = b.act("W");
    assert_eq!(record.status, StepStatus::Failed);
    assert!(record.error.unwrap().contains("permission"));
}

#[test]
fn agent_manager_creates_a_worker() {
    let b = bench(vec![golden_rule("agent_manager")], &["W"]);
    b.push("M", "agent_manager", NO_STAGE, "staff up");
    let before = b.o.world().registry.agents.len();
    b.act("M");
    let w = b.o.world();
    assert_eq!(w.registry.agents.len(), before + 1);
    let helper = w.agent("Helper").unwrap();
    assert_eq!(helper.skill_permissions.iter().collect::<Vec<_>>(), ["summary", "think"]);
    assert_eq!(helper.tool_permissions.iter().collect::<Vec<_>>(), ["kvstore"]);
    assert!(w.task(&b.t).unwrap().has_member("Helper"));
}

#[test]
fn agent_manager_grants_a_tool() {
    let reply = r#"<control>{"commands":[{"op":"modify_agent","agent_id":"W2","changes":{"add_tools":["calculator"]}}]}</control>"#;
    let b = bench(vec![rule("agent_manager", "", reply)], &["W"]);
    b.push("M", "agent_manager", NO_STAGE, "equip W2");
    b.act("M");
    assert!(b.o.world().agent("W2").unwrap().tool_permissions.contains("calculator"));
}

#[test]
fn agent_manager_invalid_config_is_rejected() {
    let reply = r#"<control>{"commands":[{"op":"create_agent","config":{"role":"nameless"}}]}</control>"#;
    let b = bench(vec![rule("agent_manager", "", reply)], &["W"]);
    b.push("M", "agent_manager", NO_STAGE, "staff up");
    let before = b.o.world().registry.agents.len();
    b.act("M");
    assert_eq!(b.sync_outcomes("create_agent"), [Outcome::Rejected]);
    assert_eq!(b.o.world().registry.agents.len(), before);
}

fn info_reply_text(b: &Bench, agent: &str) -> String {
    let w = b.o.world();
    let step = w.agent(agent).unwrap().step_queue.todo.back().unwrap().clone();
    assert_eq!(step.executor, "process_message");
    step.text_content
}

#[test]
fn ask_info_task_status_arrives_by_message() {
    let b = bench(vec![golden_rule("ask_info")], &["W"]);
    b.push("W", "ask_info", NO_STAGE, "how is the task going?");
    assert_eq!(b.act("W").sync_instruction_kinds, ["query_info"]);
    b.dispatch();
    let text = info_reply_text(&b, "W");
    assert!(text.contains("\"status\":\"running\""), "{text}");
}

#[test]
fn ask_info_unknown_agent_returns_an_error_message() {
    let b = bench(vec![rule("ask_info", "", r#"<control>{"target":"agent","id":"Ghost"}</control>"#)], &["W"]);
    b.push("W", "ask_info", NO_STAGE, "who is Ghost?");
    b.act("W");
    b.dispatch();
    assert!(info_reply_text(&b, "W").contains("unknown agent `Ghost`"));
}

#[test]
fn ask_info_stage_objective() {
    let b = bench(vec![rule("ask_info", "", r#"<control>{"target":"stage"}</control>"#)], &["W"]);
    b.push("W", "ask_info", NO_STAGE, "what is the stage for?");
    b.act("W");
    b.dispatch();
    assert!(info_reply_text(&b, "W").contains("\"objective\":\"compute\""));
}

/// Runs list_capabilities on the calculator and delivers the result, leaving
/// a tool decision at the head of W's queue.
fn tool_result_bench(rules: Vec<ScriptedRule>) -> Bench {
    let b = bench(rules, &["W"]);
    b.push_tool("W", "calculator", Some(json!({"action": "list_capabilities"})));
    b.push("W", "think", &b.s, "pending");
    b.act("W");
    b.dispatch();
    assert_eq!(b.todo("W"), ["tool_decision", "think"]);
    b
}

#[test]
fn tool_decision_continue_adds_generation_and_tool_pair() {
    let b = tool_result_bench(vec![golden_rule("tool_decision")]);
    let record = b.act("W");
    assert_eq!(record.decision.as_deref(), Some("continue"));
    assert_eq!(b.todo("W"), ["instruction_generation", "calculator", "think"]);
}

#[test]
fn tool_decision_stop_adds_nothing() {
    let b = tool_result_bench(vec![rule("tool_decision", "", r#"<control>{"continue":false}</control>"#)]);
    assert_eq!(b.act("W").decision.as_deref(), Some("stop"));
    assert_eq!(b.todo("W"), ["think"]);
}

#[test]
fn tool_decision_ambiguity_stops() {
    let b = tool_result_bench(vec![rule("tool_decision", "", "maybe?")]);
    let record = b.act("W");
    assert_eq!(record.status, StepStatus::Finished);
    assert_eq!(record.decision.as_deref(), Some("stop"));
    assert_eq!(b.todo("W"), ["think"]);
}

#[test]
fn tool_decision_forwards_capabilities_verbatim() {
    let b = tool_result_bench(vec![golden_rule("tool_decision")]);
    b.act("W");
    let w = b.o.world();
    let ig = &w.agent("W").unwrap().step_queue.todo[0];
    for description in ["Returns a + b.", "Returns a / b. Fails when b is zero."] {
        assert!(ig.text_content.contains(description), "{}", ig.text_content);
    }
}

#[test]
fn full_tool_loop_reaches_the_calculator() {
    let b = tool_result_bench(vec![
        rule("tool_decision", "list_capabilities", &golden("tool_decision")),
        rule("tool_decision", "", r#"<control>{"continue":false}</control>"#),
        golden_rule("instruction_generation"),
    ]);
    b.act("W"); // tool decision: continue
    b.act("W"); // instruction generation
    b.act("W"); // calculator add
    assert_eq!(b.last_result("W"), "3");
    b.dispatch();
    assert_eq!(b.act("W").decision.as_deref(), Some("stop"));
    assert_eq!(b.todo("W"), ["think"]);
}

#[test]
fn decision_inserts_ahead_of_pending_steps() {
    let b = bench(vec![golden_rule("decision")], &["W"]);
    b.push("W", "decision", &b.s, "choose");
    for p in ["p1", "p2", "p3"] {
        b.push("W", "think", &b.s, p);
    }
    b.act("W");
    let w = b.o.world();
    let todo: Vec<&str> = w.agent("W").unwrap().step_queue.todo.iter().map(|s| s.text_content.as_str()).collect();
    assert_eq!(todo, ["first", "second", "p1", "p2", "p3"]);
}

#[test]
fn decision_with_no_steps_is_a_no_op() {
    let b = bench(vec![rule("decision", "", "<planned_step>[]</planned_step>")], &["W"]);
    b.push("W", "decision", &b.s, "choose");
    b.push("W", "think", &b.s, "p1");
    assert_eq!(b.act("W").status, StepStatus::Finished);
    assert_eq!(b.todo("W"), ["think"]);
}

#[test]
fn decision_outside_a_stage_keeps_no_stage() {
    let b = bench(vec![golden_rule("decision")], &["W"]);
    b.push("W", "decision", NO_STAGE, "choose");
    b.act("W");
    let w = b.o.world();
    assert!(w.agent("W").unwrap().step_queue.todo.iter().all(|s| s.stage_id == NO_STAGE));
}
