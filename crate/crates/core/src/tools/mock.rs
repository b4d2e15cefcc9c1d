//! In-process servers with the same capability wire shape as remote ones.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Capability, ToolError, ToolServer};

fn number_pair(description: &str, name: &str) -> Capability {
    Capability {
        name: name.into(),
        description: description.into(),
        input_schema: json!({
            "type": "object",
            "properties": {"a": {"type": "number"}, "b": {"type": "number"}},
            "required": ["a", "b"],
        }),
    }
}

fn arg_f64(args: &Value, key: &str) -> Result<f64, ToolError> {
    args.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| ToolError::InvalidParams(format!("`{key}` must be a number")))
}

/// Renders whole numbers without a fractional part.
fn number(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

#[derive(Default)]
pub struct Calculator {
    lists: AtomicU64,
}

#[async_trait]
impl ToolServer for Calculator {
    async fn list(&self) -> Result<Vec<Capability>, ToolError> {
        self.lists.fetch_add(1, Ordering::SeqCst);
        Ok(vec![
            number_pair("Returns a + b.", "add"),
            number_pair("Returns a - b.", "sub"),
            number_pair("Returns a * b.", "mul"),
            number_pair("Returns a / b. Fails when b is zero.", "div"),
        ])
    }

    async fn call(&self, capability: &str, args: &Value) -> Result<Value, ToolError> {
        let (a, b) = (arg_f64(args, "a")?, arg_f64(args, "b")?);
        match capability {
            "add" => Ok(number(a + b)),
            "sub" => Ok(number(a - b)),
            "mul" => Ok(number(a * b)),
            "div" if b == 0.0 => Err(ToolError::Server("division by zero".into())),
            "div" => Ok(number(a / b)),
            other => Err(ToolError::UnknownCapability {
                server: "calculator".into(),
                capability: other.into(),
            }),
        }
    }

    fn list_calls(&self) -> u64 {
        self.lists.load(Ordering::SeqCst)
    }
}

#[derive(Default)]
pub struct KvStore {
    lists: AtomicU64,
    data: Mutex<BTreeMap<String, Value>>,
}

#[async_trait]
impl ToolServer for KvStore {
    async fn list(&self) -> Result<Vec<Capability>, ToolError> {
        self.lists.fetch_add(1, Ordering::SeqCst);
        Ok(vec![
            Capability {
                name: "put".into(),
                description: "Stores value under key.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {"key": {"type": "string"}, "value": {}},
                    "required": ["key", "value"],
                }),
            },
            Capability {
                name: "get".into(),
                description: "Returns the value stored under key, or null.".into(),
                input_schema: json!({
                    "type": "object",
                    "properties": {"key": {"type": "string"}},
                    "required": ["key"],
                }),
            },
        ])
    }

    async fn call(&self, capability: &str, args: &Value) -> Result<Value, ToolError> {
        let key = args
            .get("key")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::InvalidParams("`key` must be a string".into()))?
            .to_string();
        let mut data = self.data.lock().unwrap_or_else(|p| p.into_inner());
        match capability {
            "put" => {
                let value = args.get("value").cloned().unwrap_or(Value::Null);
                data.insert(key, value);
                Ok(json!("ok"))
            }
            "get" => Ok(data.get(&key).cloned().unwrap_or(Value::Null)),
            other => Err(ToolError::UnknownCapability {
                server: "kvstore".into(),
                capability: other.into(),
            }),
        }
    }

    fn list_calls(&self) -> u64 {
        self.lists.load(Ordering::SeqCst)
    }
}

/// `sleep{ms}` waits on the loop's timer, so concurrent calls overlap.
pub struct Delay {
    lists: AtomicU64,
    default_ms: u64,
}

impl Delay {
    pub fn new(default_ms: u64) -> Self {
        Delay {
            lists: AtomicU64::new(0),
            default_ms,
        }
    }

    fn millis(&self, args: &Value) -> u64 {
        args.get("ms").and_then(Value::as_u64).unwrap_or(self.default_ms)
    }
}

#[async_trait]
impl ToolServer for Delay {
    async fn list(&self) -> Result<Vec<Capability>, ToolError> {
        self.lists.fetch_add(1, Ordering::SeqCst);
        Ok(vec![Capability {
            name: "sleep".into(),
            description: format!("Waits ms milliseconds (default {}) and echoes tag.", self.default_ms),
            input_schema: json!({
                "type": "object",
                "properties": {"ms": {"type": "integer"}, "tag": {}},
            }),
        }])
    }

    async fn call(&self, capability: &str, args: &Value) -> Result<Value, ToolError> {
        if capability != "sleep" {
            return Err(ToolError::UnknownCapability {
                server: "delay".into(),
                capability: capability.into(),
            });
        }
        let ms = self.millis(args);
        tokio::time::sleep(Duration::from_millis(ms)).await;
        Ok(json!({"slept_ms": ms, "tag": args.get("tag").cloned().unwrap_or(Value::Null)}))
    }

    fn nominal_latency_ms(&self, _capability: &str, args: &Value) -> Option<u64> {
        Some(self.millis(args))
    }

    fn list_calls(&self) -> u64 {
        self.lists.load(Ordering::SeqCst)
    }
}

#[derive(Default)]
pub struct Empty {
    lists: AtomicU64,
}

#[async_trait]
impl ToolServer for Empty {
    async fn list(&self) -> Result<Vec<Capability>, ToolError> {
        self.lists.fetch_add(1, Ordering::SeqCst);
        Ok(Vec::new())
    }

    async fn call(&self, capability: &str, _args: &Value) -> Result<Value, ToolError> {
        Err(ToolError::UnknownCapability {
            server: "empty".into(),
            capability: capability.into(),
        })
    }

    fn list_calls(&self) -> u64 {
        self.lists.load(Ordering::SeqCst)
    }
}
