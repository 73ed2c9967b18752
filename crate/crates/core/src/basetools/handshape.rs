//! Handshape classification from 3D hand joints.

use super::bank::PrototypeBank;
use super::knn::{knn_rank, Metric};
use super::{BaseToolError, PhonoPrediction, ToolResult};
use crate::datamodel::features::{distance, HandJoints, HAND_JOINTS};
use crate::datamodel::ComponentKind;

pub const HANDSHAPE_FEATURE_DIM: usize = HAND_JOINTS * (HAND_JOINTS - 1) / 2;

fn frame_feature(joints: &HandJoints) -> Vec<f64> {
    let mut d = Vec::with_capacity(HANDSHAPE_FEATURE_DIM);
    for i in 0..HAND_JOINTS {
        for j in i + 1..HAND_JOINTS {
            d.push(distance(joints[i], joints[j]));
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean > 0.0 {
        d.iter_mut().for_each(|v| *v /= mean);
    }
    d
}

/// Pairwise joint distances scaled by their mean, averaged over frames where
/// the hand was detected.
pub fn handshape_feature(frames: &[Option<HandJoints>]) -> ToolResult<Vec<f64>> {
    let present: Vec<&HandJoints> = frames.iter().flatten().collect();
    if present.is_empty() {
        return Err(BaseToolError::MissingFeatures("hand absent in every frame".into()));
    }
    let mut acc = vec![0.0; HANDSHAPE_FEATURE_DIM];
    for joints in &present {
        for (a, v) in acc.iter_mut().zip(frame_feature(joints)) {
            *a += v;
        }
    }
    let n = present.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Predictions for the handshape kinds present in the bank.
pub fn classify_handshape(
    frames: &[Option<HandJoints>],
    bank: &PrototypeBank,
    k: usize,
) -> ToolResult<Vec<PhonoPrediction>> {
    if k == 0 {
        return Err(BaseToolError::InvalidK);
    }
    let feature = handshape_feature(frames)?;
    classify_feature(&feature, bank, k)
}

pub(crate) fn classify_feature(feature: &[f64], bank: &PrototypeBank, k: usize) -> ToolResult<Vec<PhonoPrediction>> {
    let mut out = Vec::new();
    for kind in [ComponentKind::HandshapeBase, ComponentKind::HandshapeMinor] {
        let Ok(kb) = bank.get(kind) else { continue };
        if kb.dim != feature.len() {
            return Err(BaseToolError::InvalidBank(format!("{kind}: dim {} != feature dim {}", kb.dim, feature.len())));
        }
        out.push(PhonoPrediction::new(kind, knn_rank(feature, &kb.prototypes, k, Metric::Cosine)));
    }
    if out.is_empty() {
        return Err(BaseToolError::MissingBankKind(ComponentKind::HandshapeBase));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basetools::bank::{KindBank, Prototype};
    use crate::basetools::RankedLabel;

    fn hand(scale: f64, spread: f64) -> HandJoints {
        let mut j = [[0.0; 3]; HAND_JOINTS];
        for (i, p) in j.iter_mut().enumerate() {
            let a = i as f64 * spread;
            *p = [scale * a.cos() * i as f64, scale * a.sin() * i as f64, 0.1 * scale * i as f64];
        }
        j
    }

    #[test]
    fn scale_and_rotation_invariant() {
        let a = handshape_feature(&[Some(hand(1.0, 0.3))]).unwrap();
        let b = handshape_feature(&[Some(hand(3.0, 0.3))]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut rot = hand(1.0, 0.3);
        for p in rot.iter_mut() {
            *p = [-p[1], p[0], p[2]];
        }
        let c = handshape_feature(&[Some(rot)]).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.len(), HANDSHAPE_FEATURE_DIM);
    }

    #[test]
    fn exact_prototype_and_missing() {
        let f = handshape_feature(&[Some(hand(1.0, 0.7))]).unwrap();
        let g = handshape_feature(&[Some(hand(1.0, 0.1))]).unwrap();
        let bank = PrototypeBank::new(
            [(
                ComponentKind::HandshapeBase,
                KindBank {
                    dim: HANDSHAPE_FEATURE_DIM,
                    prototypes: vec![
                        Prototype { label: "flat-B".into(), vector: f.clone() },
                        Prototype { label: "S".into(), vector: g },
                    ],
                },
            )]
            .into(),
        )
        .unwrap();
        let p = classify_handshape(&[None, Some(hand(2.0, 0.7)), None], &bank, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].ranked, vec![RankedLabel { label: "flat-B".into(), confidence: 1.0 }]);
        assert!(matches!(classify_handshape(&[None, None], &bank, 1), Err(BaseToolError::MissingFeatures(_))));
    }
}
