//! One agent run: alternate backend steps and tool dispatch until a final
//! answer, the invocation cap, or an unrecoverable backend failure.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, DecisionBackend};
use super::registry::ToolRegistry;
use super::step::{parse_step, Action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
    /// Feedback from the loop itself, e.g. why a step was refused.
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    /// Index of the step that produced this message.
    pub step: usize,
}

/// The transcript the backend sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub prompt: Value,
    pub messages: Vec<Message>,
    pub invocation_count: usize,
    pub cap: usize,
}

impl EpisodeState {
    /// Successful results of a tool, oldest first.
    pub fn tool_results<'s>(&'s self, name: &'s str) -> impl Iterator<Item = &'s Value> + 's {
        self.messages
            .iter()
            .filter(move |m| m.role == Role::Tool && m.tool_name.as_deref() == Some(name))
            .filter_map(|m| m.content.get("ok"))
    }

    pub fn tool_calls(&self, name: &str) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Tool && m.tool_name.as_deref() == Some(name)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Running,
    Completed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionKind {
    CapExceeded,
    MalformedStep,
    AuthError,
    TransportError,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RejectionKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool_name: String,
    pub arguments: Value,
    pub result: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    /// Every raw backend output for this step, including malformed attempts.
    pub raw_outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backend_meta: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCallRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub backend: String,
    pub prompt: Value,
    pub cap: usize,
    pub retries: usize,
    pub steps: Vec<TraceStep>,
    pub invocation_count: usize,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_document: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Maximum tool invocations.
    pub cap: usize,
    /// Extra attempts allowed per step after a malformed output.
    pub retries: usize,
}

impl EpisodeConfig {
    pub fn new(cap: usize) -> Self {
        EpisodeConfig { cap, retries: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub final_document: Option<Value>,
    pub trace: EpisodeTrace,
}

impl EpisodeOutcome {
    pub fn completed(&self) -> bool {
        self.trace.status == EpisodeStatus::Completed
    }
}

fn reject(trace: &mut EpisodeTrace, kind: RejectionKind, message: String) {
    trace.status = EpisodeStatus::Rejected;
    trace.rejection = Some(Rejection { kind, message });
}

/// Runs one episode. Never panics on backend or tool misbehaviour; every
/// failure ends up in the trace.
///
/// # Panics
/// If `cfg.cap` is zero; callers validate configuration first.
pub fn run_episode(
    prompt: Value,
    backend: &mut dyn DecisionBackend,
    registry: &mut ToolRegistry<'_>,
    cfg: EpisodeConfig,
) -> EpisodeOutcome {
    assert!(cfg.cap >= 1, "invocation cap must be at least 1");
    let tools = registry.specs();
    let mut state = EpisodeState {
        prompt: prompt.clone(),
        messages: vec![Message { role: Role::User, content: prompt.clone(), tool_name: None, step: 0 }],
        invocation_count: 0,
        cap: cfg.cap,
    };
    let mut trace = EpisodeTrace {
        backend: backend.name(),
        prompt,
        cap: cfg.cap,
        retries: cfg.retries,
        steps: Vec::new(),
        invocation_count: 0,
        status: EpisodeStatus::Running,
        rejection: None,
        final_document: None,
    };

    loop {
        let index = trace.steps.len();
        let mut record = TraceStep {
            index,
            raw_outputs: Vec::new(),
            backend_meta: Vec::new(),
            thought: None,
            action: None,
            tool_call: None,
        };
        let mut parsed = None;
        let mut last_error = String::new();
        for _attempt in 0..=cfg.retries {
            let raw = match backend.next_step(&state, &tools) {
                Ok(reply) => {
                    if let Some(meta) = reply.meta {
                        record.backend_meta.push(meta);
                    }
                    reply.raw
                }
                Err(BackendError::ResponseSchema { raw, message }) => {
                    record.raw_outputs.push(raw.clone());
                    last_error = message.clone();
                    state.messages.push(Message {
                        role: Role::Assistant,
                        content: Value::String(raw),
                        tool_name: None,
                        step: index,
                    });
                    state.messages.push(Message {
                        role: Role::Feedback,
                        content: json!({"invalid_step": message}),
                        tool_name: None,
                        step: index,
                    });
                    continue;
                }
                Err(e) => {
                    let kind = match e {
                        BackendError::Auth(_) => RejectionKind::AuthError,
                        BackendError::Transport(_) => RejectionKind::TransportError,
                        _ => RejectionKind::BackendError,
                    };
                    trace.steps.push(record);
                    reject(&mut trace, kind, e.to_string());
                    return EpisodeOutcome { final_document: None, trace };
                }
            };
            record.raw_outputs.push(raw.clone());
            state.messages.push(Message {
                role: Role::Assistant,
                content: Value::String(raw.clone()),
                tool_name: None,
                step: index,
            });
            match parse_step(&raw) {
                Ok(step) => {
                    parsed = Some(step);
                    break;
                }
                Err(message) => {
                    last_error = message.clone();
                    state.messages.push(Message {
                        role: Role::Feedback,
                        content: json!({"invalid_step": message}),
                        tool_name: None,
                        step: index,
                    });
                }
            }
        }
        let Some(step) = parsed else {
            trace.steps.push(record);
            reject(
                &mut trace,
                RejectionKind::MalformedStep,
                format!("{} malformed outputs; last: {last_error}", cfg.retries + 1),
            );
            return EpisodeOutcome { final_document: None, trace };
        };
        record.thought = Some(step.thought.clone());
        record.action = Some(step.action.clone());
        match step.action {
            Action::Final { answer } => {
                trace.steps.push(record);
                trace.status = EpisodeStatus::Completed;
                trace.final_document = Some(answer.clone());
                return EpisodeOutcome { final_document: Some(answer), trace };
            }
            Action::Tool { name, arguments } => {
                if state.invocation_count >= cfg.cap {
                    trace.steps.push(record);
                    reject(
                        &mut trace,
                        RejectionKind::CapExceeded,
                        format!("invocation {} requested with cap {}", state.invocation_count + 1, cfg.cap),
                    );
                    return EpisodeOutcome { final_document: None, trace };
                }
                state.invocation_count += 1;
                trace.invocation_count = state.invocation_count;
                let result = match registry.call(&name, &arguments) {
                    Ok(v) => json!({ "ok": v }),
                    Err(e) => e.to_value(),
                };
                state.messages.push(Message {
                    role: Role::Tool,
                    content: result.clone(),
                    tool_name: Some(name.clone()),
                    step: index,
                });
                record.tool_call = Some(ToolCallRecord { tool_name: name, arguments, result });
                trace.steps.push(record);
            }
        }
    }
}
