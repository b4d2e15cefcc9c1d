//! Tool steps: run the call written by instruction generation and report the
//! result back to the agent as a message, which queues a tool decision.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::ToolCall;
use crate::engine::{ExecutorOutput, StepContext};
use crate::executor::Services;
use crate::messaging::{Message, MessageKind};
use crate::sync::SyncInstruction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ToolInstruction {
    ListCapabilities,
    Call {
        capability: String,
        #[serde(default = "empty_args")]
        arguments: Value,
    },
}

fn empty_args() -> Value {
    Value::Object(Map::new())
}

impl ToolInstruction {
    pub fn into_call(self, server: &str) -> ToolCall {
        match self {
            ToolInstruction::ListCapabilities => ToolCall {
                server: server.to_string(),
                capability: None,
                arguments: Value::Null,
            },
            ToolInstruction::Call { capability, arguments } => ToolCall {
                server: server.to_string(),
                capability: Some(capability),
                arguments,
            },
        }
    }
}

pub fn run_tool_step(ctx: &StepContext, services: &Services) -> ExecutorOutput {
    let step = &ctx.step;
    let server = step.executor.as_str();
    let Some(raw) = step.instruction_content.clone() else {
        return ExecutorOutput::failed(format!("tool step {} has no instruction", step.step_id));
    };
    let instruction: ToolInstruction = match serde_json::from_value(raw.clone()) {
        Ok(i) => i,
        Err(e) => return ExecutorOutput::failed(format!("unreadable tool instruction: {e}")),
    };
    let listing = instruction == ToolInstruction::ListCapabilities;

    if let Err(err) = services.tools.ensure_session(server) {
        return ExecutorOutput::failed(format!("cannot reach `{server}`: {err}"));
    }
    let (result, record) = services.tools.run(instruction.into_call(server));

    let mut payload = json!({"server": server, "instruction": raw, "ok": result.is_ok()});
    let text = match &result {
        Ok(value) => {
            payload["result"] = value.clone();
            if listing {
                payload["capabilities"] = value.clone();
            }
            value.to_string()
        }
        Err(err) => {
            payload["error"] = json!(err.to_string());
            format!("error: {err}")
        }
    };
    let message = Message {
        kind: MessageKind::ToolResult,
        payload: Some(payload),
        stage_relative: step.stage_id.clone(),
        ..Message::note(
            services.ids.message(),
            step.task_id.clone(),
            ctx.agent.agent_id.clone(),
            vec![ctx.agent.agent_id.clone()],
            format!("Result from {server}: {text}"),
        )
    };
    ExecutorOutput {
        result_text: text,
        sync_instructions: vec![SyncInstruction::SendMessage(message)],
        tool_calls: vec![record],
        ..Default::default()
    }
}
