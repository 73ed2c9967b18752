//! Labelled prototype vectors per component kind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BaseToolError, ToolResult};
use crate::datamodel::{ComponentKind, DataError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub label: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindBank {
    pub dim: usize,
    pub prototypes: Vec<Prototype>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrototypeBank {
    kinds: BTreeMap<ComponentKind, KindBank>,
}

impl PrototypeBank {
    /// Checks dimensions, finiteness and label membership. Coverage of the
    /// full label set is checked separately by [`PrototypeBank::check_coverage`].
    pub fn new(kinds: BTreeMap<ComponentKind, KindBank>) -> ToolResult<Self> {
        for (kind, bank) in &kinds {
            if bank.dim == 0 {
                return Err(BaseToolError::InvalidBank(format!("{kind}: dim must be positive")));
            }
            for (i, p) in bank.prototypes.iter().enumerate() {
                if !kind.is_valid_label(&p.label) {
                    return Err(BaseToolError::InvalidBank(format!("{kind}[{i}]: unknown label `{}`", p.label)));
                }
                if p.vector.len() != bank.dim {
                    return Err(BaseToolError::InvalidBank(format!(
                        "{kind}[{i}]: dim {} != {}",
                        p.vector.len(),
                        bank.dim
                    )));
                }
                if p.vector.iter().any(|v| !v.is_finite()) {
                    return Err(BaseToolError::InvalidBank(format!("{kind}[{i}]: non-finite value")));
                }
            }
        }
        Ok(PrototypeBank { kinds })
    }

    pub fn insert(&mut self, kind: ComponentKind, bank: KindBank) -> ToolResult<()> {
        let mut kinds = std::mem::take(&mut self.kinds);
        kinds.insert(kind, bank);
        *self = Self::new(kinds)?;
        Ok(())
    }

    pub fn get(&self, kind: ComponentKind) -> ToolResult<&KindBank> {
        self.kinds.get(&kind).ok_or(BaseToolError::MissingBankKind(kind))
    }

    pub fn kinds(&self) -> impl Iterator<Item = ComponentKind> + '_ {
        self.kinds.keys().copied()
    }

    /// Every label of every present kind must have at least one prototype.
    pub fn check_coverage(&self) -> ToolResult<()> {
        for (kind, bank) in &self.kinds {
            let have: BTreeSet<&str> = bank.prototypes.iter().map(|p| p.label.as_str()).collect();
            let missing: Vec<&str> = kind.labels().iter().copied().filter(|l| !have.contains(l)).collect();
            if !missing.is_empty() {
                return Err(BaseToolError::InvalidBank(format!("{kind}: no prototypes for {}", missing.join(", "))));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> ToolResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let kinds: BTreeMap<ComponentKind, KindBank> = serde_json::from_str(&text).map_err(DataError::from)?;
        let bank = Self::new(kinds)?;
        bank.check_coverage()?;
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> ToolResult<()> {
        let text = serde_json::to_string(self).map_err(DataError::from)?;
        std::fs::write(path, text).map_err(|e| DataError::io(path, e))?;
        Ok(())
    }
}
