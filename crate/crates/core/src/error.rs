use thiserror::Error;

use crate::backend::BackendError;
use crate::tools::ToolError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("task group must not be empty")]
    EmptyGroup,
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("duplicate agent name `{0}`")]
    DuplicateAgent(String),
    #[error("sequencing error: {0}")]
    Sequencing(String),
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid intervention: {0}")]
    Intervention(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
