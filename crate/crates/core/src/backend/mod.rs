//! Language-model back ends.
//!
//! Executors only see [`Backend::complete`]: a prompt bundle in, text out.
//! All structure travels in tagged blocks inside that text.

mod http;
mod replay;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpBackendConfig};
pub use replay::{request_hash, RecordingBackend, ReplayBackend};
pub use scripted::{ScriptedBackend, ScriptedRule};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub system_text: String,
    pub context_text: String,
    pub instruction_text: String,
    pub agent_id: String,
    pub skill_name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage_note: Option<String>,
}

impl BackendResponse {
    pub fn text(text: impl Into<String>) -> Self {
        BackendResponse {
            text: text.into(),
            usage_note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("no scripted rule matches skill `{skill}` and there is no default reply")]
    NoMatch { skill: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("back end answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed back-end response: {0}")]
    Malformed(String),
    #[error("replay store has no response for request {hash}")]
    ReplayMiss { hash: String },
    #[error("replay store: {0}")]
    Store(String),
    #[error("invalid back-end config: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

/// How one named back end is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Uses the scenario's scripted rules.
    Scripted,
    Http(HttpBackendConfig),
    Record {
        store: PathBuf,
        http: HttpBackendConfig,
    },
    Replay {
        store: PathBuf,
    },
}

impl BackendConfig {
    pub fn build(&self, scripted: &Arc<ScriptedBackend>) -> Result<Arc<dyn Backend>, BackendError> {
        Ok(match self {
            BackendConfig::Scripted => scripted.clone(),
            BackendConfig::Http(cfg) => Arc::new(HttpBackend::new(cfg.clone())?),
            BackendConfig::Record { store, http } => {
                Arc::new(RecordingBackend::new(Arc::new(HttpBackend::new(http.clone())?), store)?)
            }
            BackendConfig::Replay { store } => Arc::new(ReplayBackend::open(store)?),
        })
    }
}
