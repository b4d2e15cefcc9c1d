//! Layered tool-protocol client.
//!
//! Four layers: server configs, per-agent permissions (kept on the agent),
//! live sessions, and a description cache filled once per server on first
//! connect. Every call runs on one shared async loop; callers block only on
//! their own result.

mod async_loop;
pub mod executor;
mod http;
pub mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use async_loop::AsyncLoop;
pub use executor::{run_tool_step, ToolInstruction};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("tool server `{0}` is not configured")]
    UnknownServer(String),
    #[error("no session with tool server `{0}`")]
    NoSession(String),
    #[error("`{server}` has no capability `{capability}`")]
    UnknownCapability { server: String, capability: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("server error: {0}")]
    Server(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("tool scheduler is down")]
    SchedulerDown,
    #[error("invalid tool config: {0}")]
    Config(String),
}

/// Capability description wire shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(alias = "inputSchema", default = "empty_schema")]
    pub input_schema: Value,
}

fn empty_schema() -> Value {
    serde_json::json!({"type": "object"})
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    InProcess,
    Http,
}

/// Layer 1. For in-process servers `startup_params.mock` picks the mock
/// (calculator, kvstore, delay, empty) and defaults to the server name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    #[serde(default)]
    pub transport: Transport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_params: Option<Value>,
}

impl ServerConfig {
    pub fn mock(kind: &str) -> Self {
        ServerConfig {
            transport: Transport::InProcess,
            endpoint: None,
            startup_params: Some(serde_json::json!({ "mock": kind })),
        }
    }

    pub fn http(endpoint: &str) -> Self {
        ServerConfig {
            transport: Transport::Http,
            endpoint: Some(endpoint.to_string()),
            startup_params: None,
        }
    }
}

#[async_trait]
pub trait ToolServer: Send + Sync {
    async fn list(&self) -> Result<Vec<Capability>, ToolError>;
    async fn call(&self, capability: &str, args: &Value) -> Result<Value, ToolError>;
    /// Latency reported in deterministic runs instead of wall time.
    fn nominal_latency_ms(&self, _capability: &str, _args: &Value) -> Option<u64> {
        None
    }
    /// How many times the server answered a capability listing.
    fn list_calls(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LatencyMode {
    /// Nominal latency where the server declares one (reproducible logs).
    #[default]
    Nominal,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub server: String,
    /// `None` lists the server's capabilities.
    pub capability: Option<String>,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub server: String,
    pub capability: String,
    pub latency_ms: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type BoxFuture<T> = Pin<Box<dyn Future<Output = T> + Send>>;

pub struct ToolClient {
    configs: BTreeMap<String, ServerConfig>,
    sessions: Mutex<BTreeMap<String, Arc<dyn ToolServer>>>,
    descriptions: Mutex<BTreeMap<String, Vec<Capability>>>,
    fetches: Mutex<BTreeMap<String, u64>>,
    cache_hits: AtomicU64,
    latency: LatencyMode,
    runtime: AsyncLoop,
}

impl ToolClient {
    pub fn new(configs: BTreeMap<String, ServerConfig>, latency: LatencyMode) -> Result<Self, ToolError> {
        for (name, config) in &configs {
            if config.transport == Transport::Http && config.endpoint.is_none() {
                return Err(ToolError::Config(format!("http server `{name}` has no endpoint")));
            }
        }
        Ok(ToolClient {
            configs,
            sessions: Mutex::default(),
            descriptions: Mutex::default(),
            fetches: Mutex::default(),
            cache_hits: AtomicU64::new(0),
            latency,
            runtime: AsyncLoop::start().map_err(|e| ToolError::Config(e.to_string()))?,
        })
    }

    pub fn server_names(&self) -> BTreeSet<String> {
        self.configs.keys().cloned().collect()
    }

    pub fn is_configured(&self, server: &str) -> bool {
        self.configs.contains_key(server)
    }

    pub fn session_names(&self) -> BTreeSet<String> {
        lock(&self.sessions).keys().cloned().collect()
    }

    pub fn cached_servers(&self) -> BTreeSet<String> {
        lock(&self.descriptions).keys().cloned().collect()
    }

    /// Description fetches made by this client for `server`.
    pub fn description_fetches(&self, server: &str) -> u64 {
        lock(&self.fetches).get(server).copied().unwrap_or(0)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn connect(&self, name: &str) -> Result<Arc<dyn ToolServer>, ToolError> {
        let config = self
            .configs
            .get(name)
            .ok_or_else(|| ToolError::UnknownServer(name.to_string()))?;
        Ok(match config.transport {
            Transport::Http => Arc::new(http::HttpServer::new(config.endpoint.as_deref().unwrap_or_default())?),
            Transport::InProcess => {
                let params = config.startup_params.clone().unwrap_or(Value::Null);
                let kind = params.get("mock").and_then(Value::as_str).unwrap_or(name);
                match kind {
                    "calculator" | "calc" => Arc::new(mock::Calculator::default()),
                    "kvstore" => Arc::new(mock::KvStore::default()),
                    "delay" => Arc::new(mock::Delay::new(
                        params.get("delay_ms").and_then(Value::as_u64).unwrap_or(100),
                    )),
                    "empty" => Arc::new(mock::Empty::default()),
                    other => return Err(ToolError::Config(format!("unknown in-process server kind `{other}`"))),
                }
            }
        })
    }

    fn session(&self, server: &str) -> Result<Arc<dyn ToolServer>, ToolError> {
        lock(&self.sessions)
            .get(server)
            .cloned()
            .ok_or_else(|| ToolError::NoSession(server.to_string()))
    }

    /// Opens a session for every permitted server and caches its
    /// descriptions on first connect. Failures are returned beside the
    /// connected names; the agent can still run.
    pub fn ensure_sessions<'a>(
        &self,
        permissions: impl IntoIterator<Item = &'a String>,
    ) -> (Vec<String>, Vec<(String, ToolError)>) {
        let mut connected = Vec::new();
        let mut failed = Vec::new();
        for server in permissions {
            match self.ensure_session(server) {
                Ok(()) => connected.push(server.clone()),
                Err(err) => failed.push((server.clone(), err)),
            }
        }
        (connected, failed)
    }

    pub fn ensure_session(&self, server: &str) -> Result<(), ToolError> {
        if lock(&self.descriptions).contains_key(server) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(());
        }
        let session = match self.session(server) {
            Ok(s) => s,
            Err(_) => {
                let s = self.connect(server)?;
                lock(&self.sessions).entry(server.to_string()).or_insert(s).clone()
            }
        };
        self.fetch_descriptions(server, session)
    }

    fn fetch_descriptions(&self, server: &str, session: Arc<dyn ToolServer>) -> Result<(), ToolError> {
        let listed = self.runtime.block_on(async move { session.list().await })?;
        let capabilities = match listed {
            Ok(c) => c,
            Err(err) => {
                lock(&self.sessions).remove(server);
                return Err(err);
            }
        };
        *lock(&self.fetches).entry(server.to_string()).or_default() += 1;
        lock(&self.descriptions).insert(server.to_string(), capabilities);
        Ok(())
    }

    /// Drops the cached descriptions of `server` and fetches them again.
    pub fn refresh(&self, server: &str) -> Result<(), ToolError> {
        let session = self.session(server)?;
        lock(&self.descriptions).remove(server);
        self.fetch_descriptions(server, session)
    }

    /// Cached capability list; requires a session.
    pub fn list_capabilities(&self, server: &str) -> Result<Vec<Capability>, ToolError> {
        self.session(server)?;
        lock(&self.descriptions)
            .get(server)
            .cloned()
            .ok_or_else(|| ToolError::NoSession(server.to_string()))
    }

    pub fn execute_capability(&self, server: &str, capability: &str, arguments: Value) -> Result<Value, ToolError> {
        let (result, _) = self.run(ToolCall {
            server: server.to_string(),
            capability: Some(capability.to_string()),
            arguments,
        });
        result
    }

    fn prepare(&self, call: &ToolCall) -> Result<BoxFuture<Result<Value, ToolError>>, ToolError> {
        let session = self.session(&call.server)?;
        let Some(capability) = call.capability.clone() else {
            let list = self.list_capabilities(&call.server)?;
            return Ok(Box::pin(async move {
                serde_json::to_value(list).map_err(|e| ToolError::Server(e.to_string()))
            }));
        };
        let described = self.list_capabilities(&call.server)?;
        let Some(description) = described.iter().find(|c| c.name == capability) else {
            return Err(ToolError::UnknownCapability {
                server: call.server.clone(),
                capability,
            });
        };
        validate_arguments(&description.input_schema, &call.arguments)?;
        let arguments = call.arguments.clone();
        Ok(Box::pin(async move { session.call(&capability, &arguments).await }))
    }

    fn nominal(&self, call: &ToolCall) -> Option<u64> {
        if self.latency != LatencyMode::Nominal {
            return None;
        }
        let session = self.session(&call.server).ok()?;
        match &call.capability {
            Some(c) => Some(session.nominal_latency_ms(c, &call.arguments).unwrap_or(0)),
            None => Some(0),
        }
    }

    fn record(&self, call: &ToolCall, result: &Result<Value, ToolError>, elapsed_ms: u64) -> ToolCallRecord {
        ToolCallRecord {
            server: call.server.clone(),
            capability: call.capability.clone().unwrap_or_else(|| "list_capabilities".into()),
            latency_ms: self.nominal(call).unwrap_or(elapsed_ms),
            ok: result.is_ok(),
            error: result.as_ref().err().map(ToString::to_string),
        }
    }

    /// One call, blocking the caller until it completes.
    pub fn run(&self, call: ToolCall) -> (Result<Value, ToolError>, ToolCallRecord) {
        let start = Instant::now();
        let result = match self.prepare(&call) {
            Ok(fut) => self.runtime.block_on(fut).and_then(|r| r),
            Err(err) => Err(err),
        };
        let record = self.record(&call, &result, start.elapsed().as_millis() as u64);
        (result, record)
    }

    pub fn submit(&self, call: ToolCall) -> Result<Value, ToolError> {
        self.run(call).0
    }

    /// Runs every call concurrently on the loop and gathers results in
    /// input order.
    pub fn run_batch(&self, calls: Vec<ToolCall>) -> Vec<(Result<Value, ToolError>, ToolCallRecord)> {
        if self.runtime.is_down() {
            return calls
                .iter()
                .map(|c| {
                    let r = Err(ToolError::SchedulerDown);
                    let rec = self.record(c, &r, 0);
                    (r, rec)
                })
                .collect();
        }
        let start = Instant::now();
        let prepared: Vec<Result<BoxFuture<Result<Value, ToolError>>, ToolError>> =
            calls.iter().map(|c| self.prepare(c)).collect();
        let mut pending: Vec<Option<BoxFuture<Result<Value, ToolError>>>> = Vec::new();
        let mut early: Vec<Option<ToolError>> = Vec::new();
        for p in prepared {
            match p {
                Ok(f) => {
                    pending.push(Some(f));
                    early.push(None);
                }
                Err(e) => {
                    pending.push(None);
                    early.push(Some(e));
                }
            }
        }
        let gathered = self.runtime.block_on(async move {
            let futs = pending.into_iter().map(|f| async move {
                match f {
                    Some(f) => {
                        let t = Instant::now();
                        Some((f.await, t.elapsed().as_millis() as u64))
                    }
                    None => None,
                }
            });
            futures::future::join_all(futs).await
        });
        let total = start.elapsed().as_millis() as u64;
        let gathered = match gathered {
            Ok(g) => g,
            Err(err) => calls.iter().map(|_| Some((Err(err.clone()), total))).collect(),
        };
        calls
            .iter()
            .zip(gathered)
            .zip(early)
            .map(|((call, done), early)| {
                let (result, elapsed) = match (done, early) {
                    (Some((r, t)), _) => (r, t),
                    (None, Some(e)) => (Err(e), 0),
                    (None, None) => (Err(ToolError::SchedulerDown), 0),
                };
                let record = self.record(call, &result, elapsed);
                (result, record)
            })
            .collect()
    }

    pub fn submit_batch(&self, calls: Vec<ToolCall>) -> Vec<Result<Value, ToolError>> {
        self.run_batch(calls).into_iter().map(|(r, _)| r).collect()
    }

    pub fn shutdown(&self) {
        self.runtime.shutdown();
    }

    /// Listing calls answered by the live session for `server`.
    pub fn server_list_calls(&self, server: &str) -> Option<u64> {
        self.session(server).ok().map(|s| s.list_calls())
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Checks `required` keys and the primitive `type` of declared properties.
pub fn validate_arguments(schema: &Value, args: &Value) -> Result<(), ToolError> {
    let args_obj = match args {
        Value::Object(map) => map.clone(),
        Value::Null => serde_json::Map::new(),
        other => return Err(ToolError::InvalidParams(format!("arguments must be an object, got {other}"))),
    };
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for key in required.iter().filter_map(Value::as_str) {
            if !args_obj.contains_key(key) {
                return Err(ToolError::InvalidParams(format!("missing `{key}`")));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (key, value) in &args_obj {
            let Some(expected) = props.get(key).and_then(|p| p.get("type")).and_then(Value::as_str) else {
                continue;
            };
            let ok = match expected {
                "number" => value.is_number(),
                "integer" => value.is_i64() || value.is_u64(),
                "string" => value.is_string(),
                "boolean" => value.is_boolean(),
                "object" => value.is_object(),
                "array" => value.is_array(),
                "null" => value.is_null(),
                _ => true,
            };
            if !ok {
                return Err(ToolError::InvalidParams(format!("`{key}` must be {expected}")));
            }
        }
    }
    Ok(())
}
