//! Coarse handedness labels from per-frame hand detections.

use serde::{Deserialize, Serialize};

use super::{BaseToolError, ToolResult};
use crate::datamodel::{FrameFeatures, FrameSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandednessLabel {
    Left,
    Right,
    Both,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandednessConfig {
    /// Fraction of frames a hand (or both together) must be seen to count as present.
    pub present_fraction: f64,
    /// Minimum per-hand fraction for a mixed label.
    pub mixed_fraction: f64,
}

impl Default for HandednessConfig {
    fn default() -> Self {
        HandednessConfig { present_fraction: 0.5, mixed_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandCounts {
    pub left: usize,
    pub right: usize,
    pub both: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandednessReport {
    pub label: HandednessLabel,
    pub one_handed: bool,
    pub two_handed: bool,
    pub counts: HandCounts,
    /// left / right; infinite when only the left hand was seen.
    #[serde(with = "ratio_serde")]
    pub left_right_ratio: f64,
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad ratio `{t}`"))),
        }
    }
}

/// Applies the decision table to raw counts.
///
/// Order: co-present often enough gives `both`; each hand seen enough but
/// never together gives `mixed`; exactly one hand present gives that hand;
/// otherwise the hand seen more often, right on a tie.
pub fn label_from_counts(c: &HandCounts, cfg: &HandednessConfig) -> HandednessLabel {
    let n = c.frames.max(1) as f64;
    let (l, r, b) = (c.left as f64 / n, c.right as f64 / n, c.both as f64 / n);
    if b >= cfg.present_fraction {
        HandednessLabel::Both
    } else if c.both == 0 && l >= cfg.mixed_fraction && r >= cfg.mixed_fraction {
        HandednessLabel::Mixed
    } else if l >= cfg.present_fraction && r < cfg.present_fraction {
        HandednessLabel::Left
    } else if r >= cfg.present_fraction && l < cfg.present_fraction {
        HandednessLabel::Right
    } else if c.left > c.right {
        HandednessLabel::Left
    } else {
        HandednessLabel::Right
    }
}

pub fn detect_handedness(
    span: FrameSpan,
    features: &FrameFeatures,
    cfg: &HandednessConfig,
) -> ToolResult<HandednessReport> {
    if span.start_frame >= span.end_frame {
        return Err(BaseToolError::EmptySegment);
    }
    if span.end_frame > features.len() {
        return Err(BaseToolError::InvalidSegment {
            start: span.start_frame,
            end: span.end_frame,
            frame_count: features.len(),
        });
    }
    let mut counts = HandCounts { left: 0, right: 0, both: 0, frames: span.len() };
    for t in span.start_frame..span.end_frame {
        let (l, r) = (features.left_hand[t].is_some(), features.right_hand[t].is_some());
        counts.left += l as usize;
        counts.right += r as usize;
        counts.both += (l && r) as usize;
    }
    let label = label_from_counts(&counts, cfg);
    let left_right_ratio = match (counts.left, counts.right) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        (l, r) => l as f64 / r as f64,
    };
    Ok(HandednessReport {
        label,
        one_handed: matches!(label, HandednessLabel::Left | HandednessLabel::Right),
        two_handed: label == HandednessLabel::Both,
        counts,
        left_right_ratio,
    })
}
