use serde_json::{json, Value};

use super::parse::{return_waiting_id, ParsedSkillOutput};
use super::SkillKind;
use crate::backend::BackendRequest;
use crate::config::{AgentConfig, AgentPatch};
use crate::engine::{ExecutorOutput, StepContext, StepDraft};
use crate::executor::Services;
use crate::ids::{HUMAN_OPERATOR, NO_STAGE};
use crate::messaging::Message;
use crate::state::StepType;
use crate::sync::{QueryTarget, StageOutcome, SyncInstruction};
use crate::tools::ToolInstruction;

type Interpret<'a, T> = dyn Fn(&ParsedSkillOutput) -> Result<T, String> + 'a;

struct Reply<T> {
    value: T,
    parsed: ParsedSkillOutput,
    warnings: Vec<String>,
}

/// Asks the back end until `interpret` accepts the reply, at most
/// `1 + max_retries` times.
fn ask<T>(kind: SkillKind, ctx: &StepContext, services: &Services, interpret: &Interpret<'_, T>) -> Result<Reply<T>, String> {
    let Some(backend) = services.backend(&ctx.agent.llm_config_ref) else {
        return Err(format!("no back end named `{}`", ctx.agent.llm_config_ref));
    };
    let bundle = services.templates.build(kind, ctx, services.settings.history_window);
    let request = BackendRequest {
        system_text: bundle.system_text,
        context_text: bundle.context_text,
        instruction_text: bundle.instruction_text,
        agent_id: ctx.agent.agent_id.clone(),
        skill_name: kind.name().to_string(),
    };
    let mut warnings = Vec::new();
    let mut last = String::new();
    for attempt in 0..=services.settings.max_retries {
        let reason = match backend.complete(&request) {
            Err(err) => err.to_string(),
            Ok(response) => {
                let parsed = ParsedSkillOutput::parse(&response.text);
                let checked = if parsed.errors.is_empty() {
                    interpret(&parsed)
                } else {
                    Err(parsed.errors.join("; "))
                };
                match checked {
                    Ok(value) => {
                        warnings.extend(parsed.warnings.iter().cloned());
                        return Ok(Reply { value, parsed, warnings });
                    }
                    Err(reason) => reason,
                }
            }
        };
        warnings.push(format!("{kind} attempt {} rejected: {reason}", attempt + 1));
        last = reason;
    }
    Err(format!("{} attempts rejected; last: {last}", services.settings.max_retries + 1))
}

fn output<T>(reply: &Reply<T>, result_text: impl Into<String>) -> ExecutorOutput {
    ExecutorOutput {
        result_text: result_text.into(),
        memory_ops: reply.parsed.memory_ops.clone(),
        warnings: reply.warnings.clone(),
        ..Default::default()
    }
}

fn text_or(parsed: &ParsedSkillOutput, fallback: impl FnOnce() -> String) -> String {
    if parsed.free_text.is_empty() {
        fallback()
    } else {
        parsed.free_text.clone()
    }
}

/// Removes drafts a plan may not contain.
fn plannable(drafts: &[StepDraft], warnings: &mut Vec<String>) -> Vec<StepDraft> {
    drafts
        .iter()
        .filter(|d| {
            let banned = SkillKind::parse(&d.executor).is_some_and(|k| !k.plannable())
                && d.step_type != Some(StepType::Tool);
            if banned {
                warnings.push(format!("dropped planned `{}` step", d.executor));
            }
            !banned
        })
        .cloned()
        .collect()
}

fn describe(drafts: &[StepDraft]) -> String {
    let names: Vec<&str> = drafts.iter().map(|d| d.executor.as_str()).collect();
    format!("{} step(s): {}", drafts.len(), names.join(", "))
}

fn require_plan(parsed: &ParsedSkillOutput) -> Result<Vec<StepDraft>, String> {
    parsed
        .planned_steps
        .clone()
        .ok_or_else(|| "reply has no <planned_step> block".to_string())
}

pub(super) fn execute(kind: SkillKind, ctx: &StepContext, services: &Services) -> ExecutorOutput {
    match kind {
        SkillKind::Planning => planning(ctx, services),
        SkillKind::Reflection => reflection(ctx, services),
        SkillKind::Summary => summary(ctx, services),
        SkillKind::InstructionGeneration => instruction_generation(ctx, services),
        SkillKind::Think => think(ctx, services, true),
        SkillKind::QuickThink => think(ctx, services, false),
        SkillKind::SendMessage => send_message(ctx, services),
        SkillKind::ProcessMessage => process_message(ctx, services),
        SkillKind::TaskManager => task_manager(ctx, services),
        SkillKind::AgentManager => agent_manager(ctx, services),
        SkillKind::AskInfo => ask_info(ctx, services),
        SkillKind::ToolDecision => tool_decision(ctx, services),
        SkillKind::Decision => decision(ctx, services),
    }
}

fn planning(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::Planning, ctx, services, &require_plan) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let mut warnings = reply.warnings.clone();
    let steps = plannable(&reply.value, &mut warnings);
    ExecutorOutput {
        warnings,
        append_steps: steps.clone(),
        ..output(&reply, text_or(&reply.parsed, || format!("planned {}", describe(&steps))))
    }
}

enum Verdict {
    Done,
    Adjust(Vec<StepDraft>),
}

fn reflection(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let Some(plan) = ctx.stage_history().filter(|s| s.executor == "planning").last() else {
        return ExecutorOutput::failed("no planning step in history to reflect on");
    };
    let objective = plan.step_intent.clone();
    let reply = match ask(SkillKind::Reflection, ctx, services, &|p| match p.control_str("verdict") {
        Some("done") => Ok(Verdict::Done),
        Some("adjust") => require_plan(p).map(Verdict::Adjust),
        other => Err(format!("verdict must be done or adjust, got {other:?}")),
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    match &reply.value {
        Verdict::Done => ExecutorOutput {
            decision: Some("done".into()),
            append_steps: vec![StepDraft::skill(
                "summary",
                format!("summarise: {objective}"),
                "Summarise the work of this stage.",
            )],
            ..output(&reply, text_or(&reply.parsed, || "objective met".into()))
        },
        Verdict::Adjust(drafts) => {
            let mut warnings = reply.warnings.clone();
            let steps = plannable(drafts, &mut warnings);
            ExecutorOutput {
                decision: Some("adjust".into()),
                warnings,
                append_steps: steps.clone(),
                ..output(&reply, text_or(&reply.parsed, || format!("adjusted with {}", describe(&steps))))
            }
        }
    }
}

fn summary(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    if ctx.step.stage_id == NO_STAGE {
        return ExecutorOutput::failed("summary needs a stage");
    }
    let Some(stage) = &ctx.stage else {
        return ExecutorOutput::failed(format!("stage `{}` no longer exists", ctx.step.stage_id));
    };
    let reply = match ask(SkillKind::Summary, ctx, services, &|p| {
        let text = p.control_str("summary").map(str::to_string).unwrap_or_else(|| p.free_text.clone());
        if text.trim().is_empty() {
            Err("empty summary".into())
        } else {
            Ok(text)
        }
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let me = &ctx.agent.agent_id;
    let mut sync = vec![SyncInstruction::UpdateStageCompletion {
        stage_id: stage.stage_id.clone(),
        agent_id: me.clone(),
        summary: reply.value.clone(),
    }];
    let last = stage
        .agent_allocation
        .keys()
        .all(|a| a == me || stage.completion_summaries.contains_key(a));
    if last {
        sync.push(SyncInstruction::FinishStage {
            stage_id: stage.stage_id.clone(),
            outcome: StageOutcome::Finished,
        });
    }
    ExecutorOutput {
        sync_instructions: sync,
        ..output(&reply, reply.value.clone())
    }
}

fn instruction_generation(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    match ctx.next_step() {
        Some(next) if next.step_type == StepType::Tool => {}
        Some(next) => return ExecutorOutput::failed(format!("next step `{}` is not a tool step", next.executor)),
        None => return ExecutorOutput::failed("no next step to write an instruction for"),
    }
    let reply = match ask(SkillKind::InstructionGeneration, ctx, services, &|p| {
        let control = p.control.clone().ok_or("reply has no <control> block")?;
        serde_json::from_value::<ToolInstruction>(control.clone()).map_err(|e| format!("bad tool instruction: {e}"))?;
        Ok(control)
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    ExecutorOutput {
        next_tool_instruction: Some(reply.value.clone()),
        ..output(&reply, reply.value.to_string())
    }
}

fn think(ctx: &StepContext, services: &Services, with_history: bool) -> ExecutorOutput {
    let kind = if with_history {
        SkillKind::Think
    } else {
        SkillKind::QuickThink
    };
    let reply = match ask(kind, ctx, services, &|p| {
        if p.free_text.is_empty() {
            Err("empty reply".into())
        } else {
            Ok(())
        }
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    output(&reply, reply.parsed.free_text.clone())
}

enum Send {
    Insufficient,
    Ready(super::MessageDraft),
}

const REQUEUED: &str = "requeued_after_retrieval";

fn send_message(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let step = &ctx.step;
    let reply = match ask(SkillKind::SendMessage, ctx, services, &|p| {
        let sufficient = p.control_bool("sufficient").unwrap_or(p.message_draft.is_some());
        match (&p.message_draft, sufficient) {
            (_, false) => Ok(Send::Insufficient),
            (Some(m), true) => Ok(Send::Ready(m.clone())),
            (None, true) => Err("reply has no <message> block".into()),
        }
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };

    let draft = match &reply.value {
        Send::Insufficient => {
            let requeued = step
                .instruction_content
                .as_ref()
                .and_then(|v| v.get(REQUEUED))
                .is_some();
            if requeued {
                return ExecutorOutput {
                    decision: Some("insufficient".into()),
                    ..ExecutorOutput::failed("still missing information after a retrieval round")
                };
            }
            let retry = StepDraft {
                instruction_content: Some(json!({ REQUEUED: true })),
                inbound: step.inbound.clone(),
                ..StepDraft::skill("send_message", step.step_intent.clone(), step.text_content.clone())
            };
            let gather = StepDraft::skill(
                "decision",
                format!("gather what is needed to {}", step.step_intent),
                step.text_content.clone(),
            );
            return ExecutorOutput {
                decision: Some("insufficient".into()),
                insert_steps: vec![gather, retry],
                ..output(&reply, "needs more information before sending")
            };
        }
        Send::Ready(draft) => draft.clone(),
    };

    let mut warnings = reply.warnings.clone();
    let mut receivers = draft.receivers.clone();
    if receivers.is_empty() {
        if let Some(inbound) = &step.inbound {
            receivers.push(inbound.sender_id.clone());
        }
    }
    if receivers.is_empty() {
        return ExecutorOutput::failed("message has no receivers");
    }
    if let Some(task) = &ctx.task {
        if let Some(outsider) = receivers.iter().find(|r| *r != HUMAN_OPERATOR && !task.has_member(r)) {
            return ExecutorOutput::failed(format!("receiver `{outsider}` is not in task `{}`", task.task_id));
        }
    }

    let depth = step.inbound.as_ref().map_or(0, |i| i.depth + 1);
    let mut need_reply = draft.need_reply || draft.waiting;
    let mut waiting = draft.waiting;
    if need_reply && depth >= services.settings.max_dialogue_depth {
        warnings.push(format!("dialogue depth {depth} reached; sending without asking for a reply"));
        need_reply = false;
        waiting = false;
    }
    let wait_ids = waiting.then(|| receivers.iter().map(|r| services.ids.wait(r)).collect::<Vec<_>>());
    let return_id = return_waiting_id(&step.text_content).or_else(|| step.inbound.as_ref().and_then(|i| i.wait_id.clone()));

    let message = Message {
        stage_relative: step.stage_id.clone(),
        need_reply,
        waiting: wait_ids,
        return_waiting_id: return_id,
        dialogue_depth: depth,
        ..Message::note(
            services.ids.message(),
            step.task_id.clone(),
            ctx.agent.agent_id.clone(),
            receivers.clone(),
            draft.content.clone(),
        )
    };
    ExecutorOutput {
        decision: Some("sufficient".into()),
        warnings,
        sync_instructions: vec![SyncInstruction::SendMessage(message)],
        ..output(&reply, format!("to {}: {}", receivers.join(", "), draft.content))
    }
}

fn process_message(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::ProcessMessage, ctx, services, &|p| Ok(p.control_bool("react").unwrap_or(false))) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let mut out = output(&reply, text_or(&reply.parsed, || "noted".into()));
    if reply.value {
        let sender = ctx.step.inbound.as_ref().map_or("the sender", |i| i.sender_id.as_str());
        out.decision = Some("react".into());
        out.insert_steps.push(StepDraft::skill(
            "decision",
            format!("react to the message from {sender}"),
            ctx.step.text_content.clone(),
        ));
    }
    out
}

fn commands(p: &ParsedSkillOutput) -> Result<Vec<Value>, String> {
    match p.control.as_ref().and_then(|c| c.get("commands")) {
        Some(Value::Array(items)) => Ok(items.clone()),
        Some(_) => Err("commands must be a list".into()),
        None => Err("reply has no commands".into()),
    }
}

fn field<T: serde::de::DeserializeOwned>(cmd: &Value, key: &str) -> Result<Option<T>, String> {
    match cmd.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| format!("`{key}`: {e}")),
    }
}

fn task_command(ctx: &StepContext, cmd: &Value) -> Result<SyncInstruction, String> {
    let task_id = ctx.step.task_id.clone();
    let op = cmd.get("op").and_then(Value::as_str).ok_or("command without op")?;
    Ok(match op {
        "add_stage" => SyncInstruction::AddStage {
            task_id,
            objective: field(cmd, "objective")?.ok_or("add_stage needs an objective")?,
            agent_allocation: field(cmd, "allocation")?
                .or(field(cmd, "agent_allocation")?)
                .ok_or("add_stage needs an allocation")?,
        },
        "next_stage" => SyncInstruction::NextStage { task_id },
        "finish_stage" => SyncInstruction::FinishStage {
            stage_id: field::<String>(cmd, "stage_id")?
                .or_else(|| ctx.task.as_ref().and_then(|t| t.current_stage_id().cloned()))
                .ok_or("no stage to finish")?,
            outcome: field(cmd, "outcome")?.unwrap_or_default(),
        },
        "update_task" => SyncInstruction::UpdateTask {
            task_id,
            instruction: field(cmd, "instruction")?,
            shared_info: field(cmd, "shared_info")?.unwrap_or_default(),
        },
        "finish_task" => SyncInstruction::FinishTask { task_id },
        other => return Err(format!("unknown task command `{other}`")),
    })
}

fn notification(ctx: &StepContext, services: &Services, parsed: &ParsedSkillOutput) -> Option<SyncInstruction> {
    let draft = parsed.message_draft.as_ref()?;
    let message = Message {
        stage_relative: ctx.step.stage_id.clone(),
        ..Message::note(
            services.ids.message(),
            ctx.step.task_id.clone(),
            ctx.agent.agent_id.clone(),
            draft.receivers.clone(),
            draft.content.clone(),
        )
    };
    Some(SyncInstruction::SendMessage(message))
}

fn task_manager(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::TaskManager, ctx, services, &|p| {
        commands(p)?.iter().map(|c| task_command(ctx, c)).collect::<Result<Vec<_>, _>>()
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let mut sync = reply.value.clone();
    sync.extend(notification(ctx, services, &reply.parsed));
    let kinds: Vec<&str> = sync.iter().map(SyncInstruction::kind).collect();
    ExecutorOutput {
        sync_instructions: sync.clone(),
        ..output(&reply, text_or(&reply.parsed, || kinds.join(", ")))
    }
}

fn agent_command(ctx: &StepContext, cmd: &Value) -> Result<SyncInstruction, String> {
    let op = cmd.get("op").and_then(Value::as_str).ok_or("command without op")?;
    Ok(match op {
        "create_agent" => SyncInstruction::CreateAgent {
            config: field::<AgentConfig>(cmd, "config")?.ok_or("create_agent needs a config")?,
            join_task: field::<bool>(cmd, "join_task")?
                .unwrap_or(true)
                .then(|| ctx.step.task_id.clone()),
        },
        "modify_agent" => SyncInstruction::ModifyAgent {
            agent_id: field(cmd, "agent_id")?.ok_or("modify_agent needs agent_id")?,
            changes: field::<AgentPatch>(cmd, "changes")?.unwrap_or_default(),
        },
        other => return Err(format!("unknown agent command `{other}`")),
    })
}

fn agent_manager(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::AgentManager, ctx, services, &|p| {
        commands(p)?.iter().map(|c| agent_command(ctx, c)).collect::<Result<Vec<_>, _>>()
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let kinds: Vec<&str> = reply.value.iter().map(SyncInstruction::kind).collect();
    ExecutorOutput {
        sync_instructions: reply.value.clone(),
        ..output(&reply, text_or(&reply.parsed, || kinds.join(", ")))
    }
}

fn ask_info(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::AskInfo, ctx, services, &|p| {
        let target: QueryTarget = field(p.control.as_ref().ok_or("reply has no <control> block")?, "target")?
            .ok_or("query needs a target")?;
        let id: Option<String> = field(p.control.as_ref().expect("checked"), "id")?;
        Ok((target, id))
    }) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let (target, id) = reply.value.clone();
    ExecutorOutput {
        sync_instructions: vec![SyncInstruction::QueryInfo {
            task_id: ctx.step.task_id.clone(),
            target,
            id,
        }],
        ..output(&reply, text_or(&reply.parsed, || "query sent".into()))
    }
}

/// Most recent capability list seen for `server` in this stage's tool loop.
fn known_capabilities(ctx: &StepContext, server: &str) -> Option<Value> {
    let own = ctx.step.instruction_content.as_ref();
    std::iter::once(own)
        .chain(
            ctx.stage_history()
                .rev()
                .filter(|s| s.executor == "tool_decision")
                .map(|s| s.instruction_content.as_ref()),
        )
        .flatten()
        .filter(|p| p.get("server").and_then(Value::as_str) == Some(server))
        .find_map(|p| p.get("capabilities").cloned())
}

fn tool_decision(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let payload = ctx.step.instruction_content.clone().unwrap_or(Value::Null);
    let Some(server) = payload.get("server").and_then(Value::as_str).map(str::to_string) else {
        return ExecutorOutput::failed("tool decision without a tool result");
    };
    let reply = match ask(SkillKind::ToolDecision, ctx, services, &|p| {
        p.control_bool("continue").ok_or_else(|| "no continue flag".to_string())
    }) {
        Ok(r) => r,
        Err(reason) => {
            return ExecutorOutput {
                decision: Some("stop".into()),
                warnings: vec![format!("tool decision unclear, stopping: {reason}")],
                ..ExecutorOutput::finished("stop")
            }
        }
    };
    if !reply.value {
        return ExecutorOutput {
            decision: Some("stop".into()),
            ..output(&reply, text_or(&reply.parsed, || "stop".into()))
        };
    }
    let next = reply
        .parsed
        .control_str("next")
        .map(str::to_string)
        .unwrap_or_else(|| ctx.step.step_intent.clone());
    let mut text = format!("Server: {server}\nGoal: {next}");
    if let Some(chosen) = reply.parsed.control.as_ref().and_then(|c| c.get("capability")) {
        text.push_str(&format!("\nChosen capability: {chosen}"));
    }
    if let Some(caps) = known_capabilities(ctx, &server) {
        text.push_str(&format!("\nCapabilities of {server}: {caps}"));
    }
    ExecutorOutput {
        decision: Some("continue".into()),
        insert_steps: vec![
            StepDraft::skill("instruction_generation", format!("write the next {server} call"), text),
            StepDraft::tool(&server, next.clone(), String::new()),
        ],
        ..output(&reply, text_or(&reply.parsed, || format!("continue: {next}")))
    }
}

fn decision(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let reply = match ask(SkillKind::Decision, ctx, services, &require_plan) {
        Ok(r) => r,
        Err(e) => return ExecutorOutput::failed(e),
    };
    let mut warnings = reply.warnings.clone();
    let steps = plannable(&reply.value, &mut warnings);
    ExecutorOutput {
        warnings,
        insert_steps: steps.clone(),
        ..output(&reply, text_or(&reply.parsed, || format!("decided {}", describe(&steps))))
    }
}
