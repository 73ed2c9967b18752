//! Task controllers: pseudo-gloss sequence annotation and ID-gloss cluster
//! refinement, with their validators and scripted policies.

pub mod idgloss;
pub mod pseudogloss;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::orchestrator::{EpisodeStatus, EpisodeTrace, PolicyRegistry, Rejection};

pub use idgloss::{
    correction_pass, evaluate_gates, refine, run_idgloss_task, validate_partition, CorrectionEvidence, GateInputs,
    GateOutcome, IdGlossConfig, IdGlossError, IdGlossParams, IdGlossPolicy, IdGlossRecord, IdGlossResources,
    IdGlossSample, PartitionVerdict, RefinedCluster,
};
pub use pseudogloss::{
    assign_tokens, run_pseudogloss_task, score_assignment, validate_tokens, AlignmentEntry, AssignParams, CueWeights,
    Cues, PseudoGlossConfig, PseudoGlossParams, PseudoGlossPolicy, PseudoGlossRecord, PseudoGlossResources,
    TokenVerdict, WorkflowError,
};

/// Outcome of validating a final record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationStatus {
    Valid,
    /// Made valid by the single correction pass.
    Corrected,
    Invalid,
    /// Still invalid after the correction pass.
    Uncorrectable,
    /// The episode itself was rejected; nothing to validate.
    Rejected,
}

impl ValidationStatus {
    pub fn is_valid(self) -> bool {
        matches!(self, ValidationStatus::Valid | ValidationStatus::Corrected)
    }
}

/// What a record keeps of its episode; the full trace lives in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub backend: String,
    pub status: EpisodeStatus,
    pub invocation_count: usize,
    pub cap: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

impl EpisodeSummary {
    pub fn of(trace: &EpisodeTrace) -> Self {
        EpisodeSummary {
            backend: trace.backend.clone(),
            status: trace.status,
            invocation_count: trace.invocation_count,
            cap: trace.cap,
            steps: trace.steps.len(),
            rejection: trace.rejection.clone(),
            trace_ref: None,
        }
    }
}

/// Scripted policies for both tasks, keyed `pseudogloss` and `idgloss`.
pub fn policy_registry() -> PolicyRegistry {
    let mut reg = PolicyRegistry::new();
    reg.register("pseudogloss", |params: &Value| Box::new(PseudoGlossPolicy::from_params(params)));
    reg.register("idgloss", |params: &Value| Box::new(IdGlossPolicy::from_params(params)));
    reg
}

fn params_or_default<T: serde::de::DeserializeOwned + Default>(params: &Value, what: &str) -> T {
    if params.is_null() || params.as_object().is_some_and(|o| o.is_empty()) {
        return T::default();
    }
    serde_json::from_value(params.clone()).unwrap_or_else(|e| {
        log::warn!("ignoring invalid {what} policy parameters: {e}");
        T::default()
    })
}

/// Validates `value` against a published record schema.
fn schema_violations(schema_text: &str, value: &Value) -> Vec<String> {
    match serde_json::from_str::<Value>(schema_text) {
        Ok(schema) => crate::schema::validate(&schema, value),
        Err(e) => vec![format!("schema unreadable: {e}")],
    }
}
