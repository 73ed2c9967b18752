//! Phonological component kinds and their closed label sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five sub-lexical parameters tracked per sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    HandshapeBase,
    HandshapeMinor,
    Movement,
    LocationMajor,
    LocationMinor,
}

pub const HANDSHAPE_BASE_LABELS: &[&str] =
    &["1", "3", "5", "A", "B", "C", "F", "I", "L", "O", "S", "V", "W", "X", "Y", "claw-5", "flat-B"];
pub const HANDSHAPE_MINOR_LABELS: &[&str] = &["plain", "bent", "flat", "spread", "curved"];
pub const MOVEMENT_LABELS: &[&str] = &["hold", "straight", "arc", "circle", "zigzag", "oscillate", "tap"];
pub const LOCATION_MAJOR_LABELS: &[&str] = &["head", "neck", "chest", "torso", "neutral-space"];
pub const LOCATION_MINOR_LABELS: &[&str] = &["center", "ipsilateral", "contralateral", "forward", "contact"];

impl ComponentKind {
    pub const ALL: [ComponentKind; 5] = [
        ComponentKind::HandshapeBase,
        ComponentKind::HandshapeMinor,
        ComponentKind::Movement,
        ComponentKind::LocationMajor,
        ComponentKind::LocationMinor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::HandshapeBase => "handshape-base",
            ComponentKind::HandshapeMinor => "handshape-minor",
            ComponentKind::Movement => "movement",
            ComponentKind::LocationMajor => "location-major",
            ComponentKind::LocationMinor => "location-minor",
        }
    }

    /// Closed label set for this kind.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            ComponentKind::HandshapeBase => HANDSHAPE_BASE_LABELS,
            ComponentKind::HandshapeMinor => HANDSHAPE_MINOR_LABELS,
            ComponentKind::Movement => MOVEMENT_LABELS,
            ComponentKind::LocationMajor => LOCATION_MAJOR_LABELS,
            ComponentKind::LocationMinor => LOCATION_MINOR_LABELS,
        }
    }

    pub fn is_valid_label(self, label: &str) -> bool {
        self.labels().contains(&label)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown component kind `{0}`")]
pub struct UnknownComponentKind(pub String);

impl FromStr for ComponentKind {
    type Err = UnknownComponentKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| UnknownComponentKind(s.to_string()))
    }
}

/// Canonical (or constraint) labels keyed by component kind.
pub type Phonology = BTreeMap<ComponentKind, String>;
