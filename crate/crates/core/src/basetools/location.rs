//! Major and minor location from body-relative wrist positions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bank::PrototypeBank;
use super::knn::{knn_rank, Metric};
use super::movement::velocity_stats;
use super::{rank_counts, BaseToolError, PhonoPrediction, ToolResult};
use crate::datamodel::features::{body, BodyFrame, Hand};
use crate::datamodel::ComponentKind;

/// Added to the shoulder-to-head fraction so that a wrist level with the
/// shoulders falls in the chest band.
pub const BAND_OFFSET: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationPrediction {
    pub major: PhonoPrediction,
    pub minor: Option<PhonoPrediction>,
    pub dominant: Hand,
}

/// Zone for a band value (shoulder-to-head fraction plus offset).
pub fn major_zone(band: f64) -> &'static str {
    if band >= 0.9 {
        "head"
    } else if band >= 0.6 {
        "neck"
    } else if band >= 0.2 {
        "chest"
    } else if band >= -0.4 {
        "torso"
    } else {
        "neutral-space"
    }
}

fn mid_shoulder(f: &BodyFrame) -> [f64; 3] {
    let (l, r) = (f[body::LEFT_SHOULDER], f[body::RIGHT_SHOULDER]);
    [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0, (l[2] + r[2]) / 2.0]
}

pub fn frame_band(f: &BodyFrame, hand: Hand) -> Option<f64> {
    let sh = mid_shoulder(f)[1];
    let span = f[body::HEAD][1] - sh;
    (span > 0.0).then(|| (f[hand.wrist_index()][1] - sh) / span + BAND_OFFSET)
}

/// Wrist offset from the mid-shoulder as (lateral toward the hand's own side, depth).
pub fn minor_offset(f: &BodyFrame, hand: Hand) -> Vec<f64> {
    let m = mid_shoulder(f);
    let w = f[hand.wrist_index()];
    let side = match hand {
        Hand::Right => 1.0,
        Hand::Left => -1.0,
    };
    vec![side * (w[0] - m[0]), w[2] - m[2]]
}

/// The wrist that moves more on average; ties go to the right hand.
pub fn dominant_hand(frames: &[BodyFrame]) -> Hand {
    let speed = |h: Hand| {
        let t: Vec<_> = frames.iter().map(|f| f[h.wrist_index()]).collect();
        velocity_stats(&t, 1.0)[0]
    };
    if speed(Hand::Left) > speed(Hand::Right) {
        Hand::Left
    } else {
        Hand::Right
    }
}

pub fn classify_location(frames: &[BodyFrame], bank: &PrototypeBank, k: usize) -> ToolResult<LocationPrediction> {
    if k == 0 {
        return Err(BaseToolError::InvalidK);
    }
    if frames.is_empty() {
        return Err(BaseToolError::MissingFeatures("no frames".into()));
    }
    let hand = dominant_hand(frames);
    let mut major: BTreeMap<String, usize> = BTreeMap::new();
    for f in frames {
        let band =
            frame_band(f, hand).ok_or_else(|| BaseToolError::MissingFeatures("head not above shoulders".into()))?;
        *major.entry(major_zone(band).to_string()).or_default() += 1;
    }
    let n = frames.len();
    let major = rank_counts(ComponentKind::LocationMajor, &major, n, k);

    let minor = match bank.get(ComponentKind::LocationMinor) {
        Ok(kb) => {
            if kb.dim != 2 {
                return Err(BaseToolError::InvalidBank(format!("location-minor: dim {} != 2", kb.dim)));
            }
            let mut votes: BTreeMap<String, usize> = BTreeMap::new();
            for f in frames {
                let ranked = knn_rank(&minor_offset(f, hand), &kb.prototypes, k, Metric::Euclidean);
                if let Some(top) = ranked.into_iter().next() {
                    *votes.entry(top.label).or_default() += 1;
                }
            }
            Some(rank_counts(ComponentKind::LocationMinor, &votes, n, k))
        }
        Err(_) => None,
    };
    Ok(LocationPrediction { major, minor, dominant: hand })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basetools::RankedLabel;

    fn frame(wrist_y: f64) -> BodyFrame {
        let mut f = [[0.0; 3]; body::COUNT];
        f[body::LEFT_SHOULDER] = [-0.5, 0.0, 0.0];
        f[body::RIGHT_SHOULDER] = [0.5, 0.0, 0.0];
        f[body::HEAD] = [0.0, 1.0, 0.0];
        f[body::LEFT_WRIST] = [-0.4, -1.2, 0.0];
        f[body::RIGHT_WRIST] = [0.2, wrist_y, 0.3];
        f
    }

    fn empty_bank() -> PrototypeBank {
        PrototypeBank::default()
    }

    #[test]
    fn wrist_at_shoulder_height_is_chest() {
        let frames = vec![frame(0.0); 8];
        let p = classify_location(&frames, &empty_bank(), 3).unwrap();
        assert_eq!(p.major.ranked, vec![RankedLabel { label: "chest".into(), confidence: 1.0 }]);
        assert!(p.minor.is_none());
    }

    #[test]
    fn consensus_fractions() {
        // moving wrist so the right hand is dominant; 7 frames above the head, 3 at chest
        let mut frames: Vec<BodyFrame> = (0..7).map(|i| frame(1.2 + 0.01 * i as f64)).collect();
        frames.extend((0..3).map(|i| frame(0.01 * i as f64)));
        let p = classify_location(&frames, &empty_bank(), 5).unwrap();
        assert_eq!(p.dominant, Hand::Right);
        let got: Vec<(&str, f64)> = p.major.ranked.iter().map(|r| (r.label.as_str(), r.confidence)).collect();
        assert_eq!(got, vec![("head", 0.7), ("chest", 0.3)]);
    }

    #[test]
    fn zone_table_edges() {
        assert_eq!(major_zone(0.9), "head");
        assert_eq!(major_zone(0.6), "neck");
        assert_eq!(major_zone(0.2), "chest");
        assert_eq!(major_zone(-0.4), "torso");
        assert_eq!(major_zone(-0.41), "neutral-space");
    }

    #[test]
    fn empty_frames() {
        assert!(matches!(classify_location(&[], &empty_bank(), 1), Err(BaseToolError::MissingFeatures(_))));
    }
}
