//! The step document exchanged between a backend and the loop.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Action {
    Tool { name: String, arguments: Value },
    Final { answer: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub thought: String,
    pub action: Action,
}

impl Step {
    pub fn tool(thought: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Step { thought: thought.into(), action: Action::Tool { name: name.into(), arguments } }
    }

    pub fn final_answer(thought: impl Into<String>, answer: Value) -> Self {
        Step { thought: thought.into(), action: Action::Final { answer } }
    }

    pub fn to_raw(&self) -> String {
        serde_json::to_string(self).expect("step serialises")
    }
}

pub fn step_schema() -> Value {
    json!({
        "type": "object",
        "required": ["thought", "action"],
        "additionalProperties": false,
        "properties": {
            "thought": {"type": "string"},
            "action": {
                "oneOf": [
                    {
                        "type": "object",
                        "required": ["type", "name", "arguments"],
                        "additionalProperties": false,
                        "properties": {
                            "type": {"const": "tool"},
                            "name": {"type": "string", "minLength": 1},
                            "arguments": {"type": "object"}
                        }
                    },
                    {
                        "type": "object",
                        "required": ["type", "answer"],
                        "additionalProperties": false,
                        "properties": {
                            "type": {"const": "final"},
                            "answer": {}
                        }
                    }
                ]
            }
        }
    })
}

fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses and schema-checks a raw backend output. Markdown code fences are tolerated.
pub fn parse_step(raw: &str) -> Result<Step, String> {
    let value: Value = serde_json::from_str(strip_fences(raw)).map_err(|e| format!("not JSON: {e}"))?;
    let errors = schema::validate(&step_schema(), &value);
    if !errors.is_empty() {
        return Err(errors.join("; "));
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}
