//! Brute-force k-nearest-neighbour voting over a prototype set.

use std::collections::BTreeMap;

use super::bank::Prototype;
use super::RankedLabel;
use crate::datamodel::embedding::{dot, l2_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl Metric {
    /// Distance between two equal-length vectors.
    ///
    /// For cosine, a zero vector is at distance 0 from another zero vector and
    /// 1 from anything else, so "no motion" prototypes stay usable.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let (na, nb) = (l2_norm(a), l2_norm(b));
                match (na == 0.0, nb == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    _ => (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0),
                }
            }
        }
    }
}

/// Vote among the `k` nearest prototypes.
///
/// Neighbours are ordered by distance, then label, then bank order. Labels are
/// ranked by vote count, then by their closest neighbour, then alphabetically.
/// Confidence is the vote share among the `min(k, n)` neighbours.
pub fn knn_rank(query: &[f64], prototypes: &[Prototype], k: usize, metric: Metric) -> Vec<RankedLabel> {
    let k = k.min(prototypes.len());
    if k == 0 {
        return Vec::new();
    }
    let mut dists: Vec<(f64, &str, usize)> =
        prototypes.iter().enumerate().map(|(i, p)| (metric.distance(query, &p.vector), p.label.as_str(), i)).collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, label, _) in &dists[..k] {
        let slot = votes.entry(label).or_insert((0, f64::INFINITY));
        slot.0 += 1;
        slot.1 = slot.1.min(d);
    }
    let mut ranked: Vec<(&str, usize, f64)> = votes.into_iter().map(|(l, (v, d))| (l, v, d)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.2.total_cmp(&b.2)).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .map(|(label, v, _)| RankedLabel { label: label.to_string(), confidence: v as f64 / k as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn proto(label: &str, v: &[f64]) -> Prototype {
        Prototype { label: label.into(), vector: v.to_vec() }
    }

    #[test]
    fn exact_match_k1() {
        let bank = vec![proto("B", &[1.0, 0.0]), proto("flat-B", &[0.0, 1.0])];
        let r = knn_rank(&[0.0, 2.0], &bank, 1, Metric::Cosine);
        assert_eq!(r, vec![RankedLabel { label: "flat-B".into(), confidence: 1.0 }]);
    }

    #[test]
    fn orthogonal_prototypes() {
        let bank = vec![proto("x", &[1.0, 0.0, 0.0]), proto("y", &[0.0, 1.0, 0.0]), proto("z", &[0.0, 0.0, 1.0])];
        let n = (0.9f64 * 0.9 + 0.1 * 0.1).sqrt();
        let q = [0.9 / n, 0.1 / n, 0.0];
        let r = knn_rank(&q, &bank, 3, Metric::Cosine);
        // each label gets one vote; order falls back to distance
        let d: Vec<f64> = bank.iter().map(|p| 1.0 - dot(&q, &p.vector)).collect();
        assert!(d[0] < d[1] && d[1] < d[2]);
        assert_eq!(r.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["x", "y", "z"]);
        assert!(r.iter().all(|r| (r.confidence - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn zero_vector_conventions() {
        assert_eq!(Metric::Cosine.distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(Metric::Cosine.distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
    }

    // Independent oracle: enumerate distances, count votes over the k smallest.
    fn oracle(q: &[f64], bank: &[Prototype], k: usize) -> Vec<(String, usize)> {
        let mut idx: Vec<usize> = (0..bank.len()).collect();
        let dist = |i: usize| {
            let p = &bank[i].vector;
            let num: f64 = q.iter().zip(p).map(|(a, b)| a * b).sum();
            let den = q.iter().map(|a| a * a).sum::<f64>().sqrt() * p.iter().map(|a| a * a).sum::<f64>().sqrt();
            1.0 - num / den
        };
        idx.sort_by(|&a, &b| {
            dist(a).partial_cmp(&dist(b)).unwrap().then(bank[a].label.cmp(&bank[b].label)).then(a.cmp(&b))
        });
        let mut counts: Vec<(String, usize, f64)> = Vec::new();
        for &i in idx.iter().take(k) {
            match counts.iter_mut().find(|c| c.0 == bank[i].label) {
                Some(c) => c.1 += 1,
                None => counts.push((bank[i].label.clone(), 1, dist(i))),
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.partial_cmp(&b.2).unwrap()).then(a.0.cmp(&b.0)));
        counts.into_iter().map(|(l, c, _)| (l, c)).collect()
    }

    proptest! {
        #[test]
        fn matches_oracle(
            bank in prop::collection::vec((0usize..4, prop::collection::vec(0.1f64..1.0, 4)), 1..50),
            q in prop::collection::vec(0.1f64..1.0, 4),
            k in 1usize..9,
        ) {
            let labels = ["a", "b", "c", "d"];
            let bank: Vec<Prototype> = bank.into_iter().map(|(l, v)| proto(labels[l], &v)).collect();
            let got = knn_rank(&q, &bank, k, Metric::Cosine);
            let kk = k.min(bank.len());
            let want = oracle(&q, &bank, kk);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert_eq!(&g.label, &w.0);
                prop_assert_eq!(g.confidence, w.1 as f64 / kk as f64);
            }
            let total: f64 = got.iter().map(|r| r.confidence).sum();
            prop_assert!(total <= 1.0 + 1e-12);
            prop_assert!(got.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        }
    }
}
