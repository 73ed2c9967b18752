//! Reason-act loop, tool registry and decision backends.

pub mod backend;
pub mod episode;
pub mod http;
pub mod registry;
pub mod scripted;
pub mod step;

pub use backend::{BackendError, BackendReply, DecisionBackend, ReplayBackend};
pub use episode::{
    run_episode, EpisodeConfig, EpisodeOutcome, EpisodeState, EpisodeStatus, EpisodeTrace, Message, Rejection,
    RejectionKind, Role,
};
pub use http::{HttpBackend, HttpConfig, Semaphore};
pub use registry::{ToolError, ToolRegistry, ToolSpec};
pub use scripted::{Policy, PolicyRegistry, ScriptedBackend};
pub use step::{parse_step, step_schema, Action, Step};
