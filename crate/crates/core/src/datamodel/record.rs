//! Persistence of schema-checked annotation records.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::error::{DataError, DataResult};

/// An annotation record that can list its own schema violations.
pub trait AnnotationRecord {
    /// Names of the fields that fail the record schema; empty when valid.
    fn schema_violations(&self) -> Vec<String>;
}

/// Writes `record` as pretty JSON after checking its schema.
///
/// Validation flags stored in the record are persisted as-is.
pub fn write_annotation_record<R>(record: &R, path: &Path) -> DataResult<()>
where
    R: AnnotationRecord + Serialize,
{
    let violations = record.schema_violations();
    if !violations.is_empty() {
        return Err(DataError::SchemaViolation(violations));
    }
    let text = serde_json::to_string_pretty(record)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
}

pub fn read_annotation_record<R>(path: &Path) -> DataResult<R>
where
    R: AnnotationRecord + DeserializeOwned,
{
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let record: R = serde_json::from_str(&text)?;
    let violations = record.schema_violations();
    if !violations.is_empty() {
        return Err(DataError::SchemaViolation(violations));
    }
    Ok(record)
}
