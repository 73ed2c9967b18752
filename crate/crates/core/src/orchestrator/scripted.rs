//! Deterministic policies standing in for a reasoning model.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use super::backend::{BackendError, BackendReply, DecisionBackend};
use super::episode::EpisodeState;
use super::registry::ToolSpec;
use super::step::Step;

/// A pure function from transcript to next step.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, state: &EpisodeState) -> Step;
}

type Factory = Arc<dyn Fn(&Value) -> Box<dyn Policy> + Send + Sync>;

#[derive(Clone, Default)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl PolicyRegistry {
    pub fn new() -> Self {
        PolicyRegistry::default()
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Value) -> Box<dyn Policy> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn backend(&self, name: &str, params: &Value) -> Result<ScriptedBackend, BackendError> {
        let factory = self.factories.get(name).ok_or_else(|| BackendError::UnknownPolicy(name.to_string()))?;
        Ok(ScriptedBackend { policy: factory(params) })
    }
}

pub struct ScriptedBackend {
    policy: Box<dyn Policy>,
}

impl ScriptedBackend {
    pub fn new(policy: Box<dyn Policy>) -> Self {
        ScriptedBackend { policy }
    }
}

impl DecisionBackend for ScriptedBackend {
    fn name(&self) -> String {
        format!("scripted:{}", self.policy.name())
    }

    fn next_step(&mut self, state: &EpisodeState, _: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        Ok(BackendReply::new(self.policy.decide(state).to_raw()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::episode::{run_episode, EpisodeConfig};
    use crate::orchestrator::registry::ToolRegistry;
    use serde_json::json;

    struct CallThenStop;

    impl Policy for CallThenStop {
        fn name(&self) -> &str {
            "call-then-stop"
        }
        fn decide(&self, state: &EpisodeState) -> Step {
            match state.tool_results("count").next() {
                None => Step::tool("count first", "count", json!({})),
                Some(v) => Step::final_answer("done", json!({"count": v})),
            }
        }
    }

    #[test]
    fn unknown_policy_and_determinism() {
        let mut reg = PolicyRegistry::new();
        reg.register("call-then-stop", |_| Box::new(CallThenStop));
        assert!(matches!(reg.backend("nope", &json!({})), Err(BackendError::UnknownPolicy(_))));
        let run = || {
            let mut tools = ToolRegistry::new();
            tools.register_tool("count", "", json!({"type": "object"}), |_| Ok(json!(3))).unwrap();
            let mut b = reg.backend("call-then-stop", &json!({})).unwrap();
            let out = run_episode(json!({"task": "x"}), &mut b, &mut tools, EpisodeConfig::new(2));
            serde_json::to_string(&out.trace).unwrap()
        };
        assert_eq!(run(), run());
    }
}
