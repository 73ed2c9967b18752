//! OpenAI-compatible chat-completions backend.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, BackendReply, DecisionBackend};
use super::episode::{EpisodeState, Role};
use super::registry::ToolSpec;
use super::step::{parse_step, Action, Step};

pub const ENDPOINT_ENV: &str = "SIGNAGENT_LLM_ENDPOINT";
pub const API_KEY_ENV: &str = "SIGNAGENT_LLM_API_KEY";

const SYSTEM_PROMPT: &str = "You annotate sign language data by calling the provided tools. \
Call one tool per turn. When finished, reply with only a JSON object \
{\"thought\": string, \"action\": {\"type\": \"final\", \"answer\": object}}.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub max_retries: usize,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
    pub temperature: f64,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            max_retries: 2,
            backoff_base_ms: 250,
            timeout_secs: 120,
            temperature: 0.0,
        }
    }

    /// Endpoint and key from the environment; `None` when no endpoint is set.
    pub fn from_env(model: impl Into<String>) -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty())?;
        let mut cfg = HttpConfig::new(endpoint, model);
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Counting semaphore bounding concurrent requests across backends.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    limiter: Arc<Semaphore>,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig, limiter: Arc<Semaphore>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { cfg, client, limiter })
    }

    pub fn request_body(&self, state: &EpisodeState, tools: &[ToolSpec]) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": transcript_messages(state),
            "tools": tools.iter().map(|t| json!({
                "type": "function",
                "function": {"name": t.name, "description": t.description, "parameters": t.schema}
            })).collect::<Vec<_>>(),
        })
    }
}

fn call_id(step: usize) -> String {
    format!("call_{step}")
}

/// Maps the loop transcript onto chat messages.
pub fn transcript_messages(state: &EpisodeState) -> Vec<Value> {
    let mut out = vec![json!({"role": "system", "content": SYSTEM_PROMPT})];
    for m in &state.messages {
        match m.role {
            Role::User => out.push(json!({"role": "user", "content": text_of(&m.content)})),
            Role::Feedback => {
                out.push(json!({"role": "user", "content": format!("Invalid step: {}", text_of(&m.content))}))
            }
            Role::Tool => out.push(json!({
                "role": "tool",
                "tool_call_id": call_id(m.step),
                "content": text_of(&m.content),
            })),
            Role::Assistant => {
                let raw = text_of(&m.content);
                match parse_step(&raw) {
                    Ok(Step { thought, action: Action::Tool { name, arguments } }) => out.push(json!({
                        "role": "assistant",
                        "content": thought,
                        "tool_calls": [{
                            "id": call_id(m.step),
                            "type": "function",
                            "function": {"name": name, "arguments": arguments.to_string()}
                        }]
                    })),
                    _ => out.push(json!({"role": "assistant", "content": raw})),
                }
            }
        }
    }
    out
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Turns a chat-completions response into a raw step string.
pub fn response_to_raw(body: &Value) -> Result<String, String> {
    let message = body.pointer("/choices/0/message").ok_or_else(|| "response has no choices[0].message".to_string())?;
    let thought = message.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    if let Some(call) = message.get("tool_calls").and_then(Value::as_array).and_then(|c| c.first()) {
        let name = call
            .pointer("/function/name")
            .and_then(Value::as_str)
            .ok_or_else(|| "tool call without a function name".to_string())?;
        let args = match call.pointer("/function/arguments") {
            Some(Value::String(s)) if s.trim().is_empty() => json!({}),
            Some(Value::String(s)) => {
                serde_json::from_str(s).map_err(|e| format!("tool arguments are not JSON: {e}"))?
            }
            Some(v @ Value::Object(_)) => v.clone(),
            _ => json!({}),
        };
        return Ok(Step::tool(thought, name, args).to_raw());
    }
    Ok(thought)
}

impl DecisionBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.cfg.model)
    }

    fn next_step(&mut self, state: &EpisodeState, tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let body = self.request_body(state, tools);
        let url = self.cfg.url();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_base_ms << (attempt - 1).min(16)));
            }
            let response = {
                let _permit = self.limiter.acquire();
                let mut req = self.client.post(&url).json(&body);
                if let Some(key) = &self.cfg.api_key {
                    req = req.bearer_auth(key);
                }
                req.send()
            };
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    log::warn!("request attempt {} failed: {last}", attempt + 1);
                    continue;
                }
            };
            let status = response.status().as_u16();
            let text = response.text().unwrap_or_default();
            match status {
                401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
                200..=299 => {}
                429 | 500..=599 => {
                    last = format!("HTTP {status}");
                    log::warn!("request attempt {} got {last}", attempt + 1);
                    continue;
                }
                _ => return Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
            }
            let parsed: Value = serde_json::from_str(&text).map_err(|e| BackendError::ResponseSchema {
                raw: text.clone(),
                message: format!("body is not JSON: {e}"),
            })?;
            let raw = response_to_raw(&parsed)
                .map_err(|message| BackendError::ResponseSchema { raw: text.clone(), message })?;
            return Ok(BackendReply { raw, meta: Some(json!({"attempts": attempt + 1, "response": parsed})) });
        }
        Err(BackendError::Transport(format!("{} attempts failed; last: {last}", self.cfg.max_retries + 1)))
    }
}
