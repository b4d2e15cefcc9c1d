//! JSON-RPC over HTTP: `tools/list` and `tools/call`.

use std::sync::atomic::{AtomicU64, Ordering};

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{Capability, ToolError, ToolServer};

pub struct HttpServer {
    endpoint: String,
    client: reqwest::Client,
    next_id: AtomicU64,
    lists: AtomicU64,
}

impl HttpServer {
    pub fn new(endpoint: &str) -> Result<Self, ToolError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ToolError::Transport(e.to_string()))?;
        Ok(HttpServer {
            endpoint: endpoint.to_string(),
            client,
            next_id: AtomicU64::new(1),
            lists: AtomicU64::new(0),
        })
    }

    async fn rpc(&self, method: &str, params: Value) -> Result<Value, ToolError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .await
            .map_err(|e| ToolError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ToolError::Transport(format!("{method}: HTTP {status}")));
        }
        let reply: Value = response
            .json()
            .await
            .map_err(|e| ToolError::Transport(format!("{method}: {e}")))?;
        if let Some(err) = reply.get("error") {
            let message = err.get("message").and_then(Value::as_str).unwrap_or("server error");
            return Err(ToolError::Server(message.to_string()));
        }
        reply
            .get("result")
            .cloned()
            .ok_or_else(|| ToolError::Transport(format!("{method}: reply has no result")))
    }
}

#[async_trait]
impl ToolServer for HttpServer {
    async fn list(&self) -> Result<Vec<Capability>, ToolError> {
        self.lists.fetch_add(1, Ordering::SeqCst);
        let result = self.rpc("tools/list", json!({})).await?;
        let tools = result.get("tools").cloned().unwrap_or(result);
        serde_json::from_value(tools).map_err(|e| ToolError::Transport(format!("tools/list: {e}")))
    }

    async fn call(&self, capability: &str, args: &Value) -> Result<Value, ToolError> {
        let result = self
            .rpc("tools/call", json!({"name": capability, "arguments": args}))
            .await?;
        let Some(content) = result.get("content").and_then(Value::as_array) else {
            return Ok(result);
        };
        let text: Vec<&str> = content
            .iter()
            .filter_map(|c| c.get("text").and_then(Value::as_str))
            .collect();
        let text = text.join("\n");
        if result.get("isError").and_then(Value::as_bool).unwrap_or(false) {
            return Err(ToolError::Server(text));
        }
        Ok(serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    fn list_calls(&self) -> u64 {
        self.lists.load(Ordering::SeqCst)
    }
}
