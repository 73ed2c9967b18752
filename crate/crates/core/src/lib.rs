//! Tool-calling agent runtime for sign-language annotation.

pub mod basetools;
pub mod datamodel;
pub mod enhanced;
pub mod knowledge;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod schema;
pub mod synth;
pub mod workflows;
