//! Named tools with declared argument schemas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::schema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub schema: Value,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("arguments failed schema: {}", .0.join(", "))]
    SchemaViolation(Vec<String>),
    #[error("{0}")]
    Failed(String),
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::UnknownTool(_) => "UnknownTool",
            ToolError::SchemaViolation(_) => "SchemaViolation",
            ToolError::Failed(_) => "ToolError",
        }
    }

    /// The document appended to the transcript.
    pub fn to_value(&self) -> Value {
        json!({"error": {"kind": self.kind(), "message": self.to_string()}})
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tool `{0}` already registered")]
pub struct DuplicateTool(pub String);

type Handler<'a> = Box<dyn FnMut(&Value) -> Result<Value, ToolError> + Send + 'a>;

/// Tools available to one episode. Handlers may hold per-episode state.
#[derive(Default)]
pub struct ToolRegistry<'a> {
    tools: BTreeMap<String, (ToolSpec, Handler<'a>)>,
}

impl<'a> ToolRegistry<'a> {
    pub fn new() -> Self {
        ToolRegistry { tools: BTreeMap::new() }
    }

    pub fn register_tool<F>(
        &mut self,
        name: &str,
        description: &str,
        schema: Value,
        handler: F,
    ) -> Result<(), DuplicateTool>
    where
        F: FnMut(&Value) -> Result<Value, ToolError> + Send + 'a,
    {
        if self.tools.contains_key(name) {
            return Err(DuplicateTool(name.to_string()));
        }
        let spec = ToolSpec { name: name.to_string(), description: description.to_string(), schema };
        self.tools.insert(name.to_string(), (spec, Box::new(handler)));
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.values().map(|(s, _)| s.clone()).collect()
    }

    /// Validates the arguments, then runs the handler.
    pub fn call(&mut self, name: &str, arguments: &Value) -> Result<Value, ToolError> {
        let (spec, handler) = self.tools.get_mut(name).ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let errors = schema::validate(&spec.schema, arguments);
        if !errors.is_empty() {
            return Err(ToolError::SchemaViolation(errors));
        }
        handler(arguments)
    }
}
