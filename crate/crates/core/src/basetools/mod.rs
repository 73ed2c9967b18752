//! Phonological classifiers, segmentation, dictionary retrieval,
//! lemmatization and handedness detection.

pub mod bank;
pub mod handedness;
pub mod handshape;
pub mod knn;
pub mod lemma;
pub mod location;
pub mod movement;
pub mod retrieve;
pub mod segment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ComponentKind, DataError, EmbeddingError};

pub use bank::{KindBank, Prototype, PrototypeBank};
pub use handedness::{detect_handedness, HandednessConfig, HandednessLabel, HandednessReport};
pub use handshape::{classify_handshape, handshape_feature};
pub use knn::{knn_rank, Metric};
pub use lemma::{sign_lemma, LemmaTable};
pub use location::{classify_location, major_zone, LocationPrediction};
pub use movement::{classify_movement, movement_feature, MovementConfig};
pub use retrieve::{gloss_retrieve, DictionaryIndex};
pub use segment::{segment_signs, Activity, Segment, SegmenterConfig};

#[derive(Debug, Error)]
pub enum BaseToolError {
    #[error("no usable frames: {0}")]
    MissingFeatures(String),
    #[error("trajectory too short: {frames} frames, need at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("no active spans found")]
    NoActiveSpans,
    #[error("segment is empty")]
    EmptySegment,
    #[error("segment [{start}, {end}) outside 0..{frame_count}")]
    InvalidSegment { start: usize, end: usize, frame_count: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("prototype bank has no {0} prototypes")]
    MissingBankKind(ComponentKind),
    #[error("invalid prototype bank: {0}")]
    InvalidBank(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type ToolResult<T> = Result<T, BaseToolError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub confidence: f64,
}

/// Top-k labels for one component kind with their confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonoPrediction {
    pub component_kind: ComponentKind,
    pub ranked: Vec<RankedLabel>,
    pub k: usize,
}

impl PhonoPrediction {
    pub fn new(component_kind: ComponentKind, ranked: Vec<RankedLabel>) -> Self {
        let k = ranked.len();
        PhonoPrediction { component_kind, ranked, k }
    }

    pub fn top(&self) -> Option<&str> {
        self.ranked.first().map(|r| r.label.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|r| r.label.as_str())
    }

    /// Checks the ranking invariants: distinct labels, confidences in (0, 1],
    /// non-increasing, summing to at most one.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        let distinct = self.ranked.iter().all(|r| seen.insert(r.label.as_str()));
        let bounded = self.ranked.iter().all(|r| r.confidence > 0.0 && r.confidence <= 1.0);
        let sorted = self.ranked.windows(2).all(|w| w[0].confidence >= w[1].confidence);
        let total: f64 = self.ranked.iter().map(|r| r.confidence).sum();
        distinct && bounded && sorted && total <= 1.0 + 1e-9 && self.k == self.ranked.len()
    }
}

/// Rank a frequency table of labels into a prediction: share descending, then
/// label. Shares are `count / total`.
pub(crate) fn rank_counts(
    kind: ComponentKind,
    counts: &std::collections::BTreeMap<String, usize>,
    total: usize,
    k: usize,
) -> PhonoPrediction {
    let mut items: Vec<(&String, &usize)> = counts.iter().filter(|(_, &c)| c > 0).collect();
    items.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let ranked = items
        .into_iter()
        .take(k)
        .map(|(l, &c)| RankedLabel { label: l.clone(), confidence: c as f64 / total as f64 })
        .collect();
    PhonoPrediction::new(kind, ranked)
}
