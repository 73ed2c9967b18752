//! Rank-discounted agreement between canonical phonology and predictions.

use std::collections::BTreeMap;

use super::{EnhancedError, EnhancedResult};
use crate::basetools::PhonoPrediction;
use crate::datamodel::{ComponentKind, Phonology};

/// Predictions for one sample or segment, keyed by component kind.
pub type PredictionSet = BTreeMap<ComponentKind, PhonoPrediction>;

/// Mean over the candidate's canonical components of
/// `sum_r 1[label_r == canonical] * p_r / r`.
///
/// Components without a prediction contribute zero but still count in the mean.
pub fn score_phonological_agreement(canonical: &Phonology, predictions: &PredictionSet) -> EnhancedResult<f64> {
    if canonical.is_empty() {
        return Err(EnhancedError::EmptyPhonology);
    }
    let mut total = 0.0;
    for (kind, label) in canonical {
        let Some(pred) = predictions.get(kind) else { continue };
        let inner: f64 = pred
            .ranked
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.label == label)
            .map(|(i, r)| r.confidence / (i + 1) as f64)
            .sum();
        total += inner;
    }
    Ok(total / canonical.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basetools::RankedLabel;
    use proptest::prelude::*;
    use ComponentKind::*;

    fn pred(kind: ComponentKind, items: &[(&str, f64)]) -> PhonoPrediction {
        PhonoPrediction::new(
            kind,
            items.iter().map(|(l, c)| RankedLabel { label: l.to_string(), confidence: *c }).collect(),
        )
    }

    #[test]
    fn worked_example() {
        let canonical: Phonology = [(HandshapeBase, "B".to_string()), (LocationMajor, "chest".to_string())].into();
        let preds: PredictionSet = [
            (HandshapeBase, pred(HandshapeBase, &[("B", 0.8), ("A", 0.1)])),
            (LocationMajor, pred(LocationMajor, &[("neck", 0.5), ("chest", 0.3)])),
        ]
        .into();
        let s = score_phonological_agreement(&canonical, &preds).unwrap();
        assert_eq!(s, (0.8 / 1.0 + 0.3 / 2.0) / 2.0);
        assert!((s - 0.475).abs() < 1e-12);
    }

    #[test]
    fn zero_and_perfect() {
        let canonical: Phonology = [(Movement, "arc".to_string())].into();
        let miss: PredictionSet = [(Movement, pred(Movement, &[("tap", 0.9)]))].into();
        assert_eq!(score_phonological_agreement(&canonical, &miss).unwrap(), 0.0);
        let hit: PredictionSet = [(Movement, pred(Movement, &[("arc", 1.0)]))].into();
        assert_eq!(score_phonological_agreement(&canonical, &hit).unwrap(), 1.0);
        assert!(matches!(score_phonological_agreement(&Phonology::new(), &hit), Err(EnhancedError::EmptyPhonology)));
    }

    proptest! {
        #[test]
        fn monotone_in_matching_confidence(bump in 0.0f64..0.2, c in 0.1f64..0.5, other in 0.0f64..0.5) {
            let canonical: Phonology = [(Movement, "arc".to_string()), (LocationMajor, "head".to_string())].into();
            let mk = |c: f64, o: f64| -> PredictionSet {
                [
                    (Movement, pred(Movement, &[("tap", 0.5), ("arc", c)])),
                    (LocationMajor, pred(LocationMajor, &[("neck", o)])),
                ].into()
            };
            let base = score_phonological_agreement(&canonical, &mk(c, other)).unwrap();
            let up = score_phonological_agreement(&canonical, &mk(c + bump, other)).unwrap();
            prop_assert!(up >= base);
            // the non-matching prediction has no effect
            let changed = score_phonological_agreement(&canonical, &mk(c, 0.0)).unwrap();
            prop_assert_eq!(base, changed);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
