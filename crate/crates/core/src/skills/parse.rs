//! Tagged-block grammar shared by every skill.
//!
//! A reply is free text with optional blocks:
//! `<planned_step>[...]</planned_step>`, `<persistent_memory>[...]</persistent_memory>`,
//! `<message>{...}</message>` and `<control>{...}</control>`, each holding JSON.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::engine::StepDraft;

pub const PLANNED_STEP: &str = "planned_step";
pub const PERSISTENT_MEMORY: &str = "persistent_memory";
pub const MESSAGE: &str = "message";
pub const CONTROL: &str = "control";

const TAGS: [&str; 4] = [PLANNED_STEP, PERSISTENT_MEMORY, MESSAGE, CONTROL];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryOp {
    Add(String),
    Delete(String),
}

/// Preliminary message as written by the model. `waiting` is still a flag
/// here; the send executor turns it into wait ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MessageDraft {
    #[serde(alias = "receiver_ids", alias = "to")]
    pub receivers: Vec<String>,
    pub content: String,
    pub need_reply: bool,
    pub waiting: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSkillOutput {
    /// `None` when the reply had no planned-step block at all.
    pub planned_steps: Option<Vec<StepDraft>>,
    pub memory_ops: Vec<MemoryOp>,
    pub message_draft: Option<MessageDraft>,
    pub control: Option<Value>,
    pub free_text: String,
    pub warnings: Vec<String>,
    /// Blocks that were present but did not hold valid JSON of the right shape.
    pub errors: Vec<String>,
}

/// Returns the body of every `<tag>...</tag>` block in order. An opening tag
/// without a close is ignored.
pub fn extract_blocks<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        let Some(end) = after.find(&close) else { break };
        out.push(after[..end].trim());
        rest = &after[end + close.len()..];
    }
    out
}

/// Removes every known block, leaving the prose.
pub fn strip_blocks(text: &str) -> String {
    let mut out = text.to_string();
    for tag in TAGS {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        while let Some(start) = out.find(&open) {
            let Some(rel) = out[start..].find(&close) else { break };
            out.replace_range(start..start + rel + close.len(), "");
        }
    }
    out.trim().to_string()
}

/// Memory commands from the persistent-memory block(s). A malformed block
/// yields no ops and a warning; it never fails the step.
pub fn parse_memory_ops(text: &str) -> (Vec<MemoryOp>, Vec<String>) {
    let mut ops = Vec::new();
    let mut warnings = Vec::new();
    for body in extract_blocks(text, PERSISTENT_MEMORY) {
        match memory_block(body) {
            Ok(mut found) => ops.append(&mut found),
            Err(reason) => warnings.push(format!("ignored persistent_memory block: {reason}")),
        }
    }
    (ops, warnings)
}

fn memory_block(body: &str) -> Result<Vec<MemoryOp>, String> {
    let value: Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => return Err(format!("expected a list, got {other}")),
    };
    items
        .into_iter()
        .map(|item| {
            let Value::Object(map) = item else {
                return Err("memory command is not an object".to_string());
            };
            match (map.get("add"), map.get("delete")) {
                (Some(add), None) => Ok(MemoryOp::Add(match add {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })),
                (None, Some(Value::String(key))) => Ok(MemoryOp::Delete(key.clone())),
                _ => Err(format!("unrecognised memory command {}", Value::Object(map))),
            }
        })
        .collect()
}

fn json_block(text: &str, tag: &str, errors: &mut Vec<String>) -> Option<Value> {
    let body = extract_blocks(text, tag).into_iter().last()?;
    match serde_json::from_str(body) {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("<{tag}> is not valid JSON: {e}"));
            None
        }
    }
}

impl ParsedSkillOutput {
    pub fn parse(text: &str) -> Self {
        let mut errors = Vec::new();
        let (memory_ops, warnings) = parse_memory_ops(text);

        let planned_steps = json_block(text, PLANNED_STEP, &mut errors).and_then(|v| {
            let items = match v {
                Value::Array(items) => items,
                obj @ Value::Object(_) => vec![obj],
                _ => {
                    errors.push("<planned_step> must hold a list".into());
                    return None;
                }
            };
            let mut drafts = Vec::with_capacity(items.len());
            for item in items {
                match serde_json::from_value::<StepDraft>(item) {
                    Ok(d) if !d.executor.trim().is_empty() => drafts.push(d),
                    Ok(_) => errors.push("planned step without executor".into()),
                    Err(e) => errors.push(format!("bad planned step: {e}")),
                }
            }
            Some(drafts)
        });

        let message_draft = json_block(text, MESSAGE, &mut errors).and_then(|v| {
            serde_json::from_value::<MessageDraft>(v)
                .map_err(|e| errors.push(format!("bad message: {e}")))
                .ok()
        });

        let control = json_block(text, CONTROL, &mut errors);
        if control.as_ref().is_some_and(|c| !c.is_object()) {
            errors.push("<control> must hold an object".into());
        }

        ParsedSkillOutput {
            planned_steps,
            memory_ops,
            message_draft,
            control,
            free_text: strip_blocks(text),
            warnings,
            errors,
        }
    }

    pub fn control_str(&self, key: &str) -> Option<&str> {
        self.control.as_ref()?.get(key)?.as_str()
    }

    pub fn control_bool(&self, key: &str) -> Option<bool> {
        let v = self.control.as_ref()?.get(key)?;
        match v {
            Value::Bool(b) => Some(*b),
            Value::String(s) => match s.to_ascii_lowercase().as_str() {
                "true" | "yes" => Some(true),
                "false" | "no" => Some(false),
                _ => None,
            },
            _ => None,
        }
    }
}

/// Wait id echoed at the end of a reply step's text, if any.
pub fn return_waiting_id(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("return_waiting_id:"))
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
}
