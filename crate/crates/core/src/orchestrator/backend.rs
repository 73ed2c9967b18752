//! The decision-backend interface and trace replay.

use std::collections::VecDeque;

use serde_json::Value;
use thiserror::Error;

use super::episode::{EpisodeState, EpisodeTrace};
use super::registry::ToolSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transport failed: {0}")]
    Transport(String),
    /// The backend answered but not with something usable as a step.
    #[error("response schema: {message}")]
    ResponseSchema { raw: String, message: String },
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("replay exhausted")]
    ReplayExhausted,
}

/// Raw text of one backend turn plus optional transport metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub raw: String,
    pub meta: Option<Value>,
}

impl BackendReply {
    pub fn new(raw: impl Into<String>) -> Self {
        BackendReply { raw: raw.into(), meta: None }
    }
}

pub trait DecisionBackend {
    fn name(&self) -> String;
    fn next_step(&mut self, state: &EpisodeState, tools: &[ToolSpec]) -> Result<BackendReply, BackendError>;
}

/// Feeds back the raw outputs recorded in a trace, in order.
pub struct ReplayBackend {
    outputs: VecDeque<String>,
}

impl ReplayBackend {
    pub fn from_trace(trace: &EpisodeTrace) -> Self {
        ReplayBackend { outputs: trace.steps.iter().flat_map(|s| s.raw_outputs.iter().cloned()).collect() }
    }
}

impl DecisionBackend for ReplayBackend {
    fn name(&self) -> String {
        "replay".into()
    }

    fn next_step(&mut self, _: &EpisodeState, _: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        self.outputs.pop_front().map(BackendReply::new).ok_or(BackendError::ReplayExhausted)
    }
}
