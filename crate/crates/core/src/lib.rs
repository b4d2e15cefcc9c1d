//! Step-granular multi-agent runtime.
//!
//! State lives in four tiers (task, stage, agent, step). Agents pop one step
//! at a time from their own queue, run it through a skill (LLM-driven) or a
//! tool executor, and may extend their queue with the result. Task-level
//! changes go through [`sync`]; messages are relayed by a dispatcher.

pub mod audit;
pub mod backend;
pub mod clock;
pub mod config;
pub mod engine;
pub mod error;
pub mod event;
pub mod executor;
pub mod ids;
pub mod messaging;
pub mod orchestrator;
pub mod scenario;
pub mod sim;
pub mod skills;
pub mod state;
pub mod sync;
pub mod tools;
pub mod world;

pub use config::{AgentConfig, AgentPatch};
pub use engine::{ExecutorOutput, StepContext, StepDraft};
pub use error::{Error, Result};
pub use event::{Event, EventKind, EventLog};
pub use messaging::{Message, MessageKind};
pub use orchestrator::{InterventionCommand, Orchestrator, OrchestratorConfig, RunStatus, RunSummary};
pub use scenario::{Assertion, Scenario, ScenarioRun};
pub use state::{AgentState, Lifecycle, Registry, StageState, StepState, StepStatus, StepType, TaskState};
pub use sync::SyncInstruction;
pub use world::World;
