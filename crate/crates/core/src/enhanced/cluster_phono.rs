//! Per-cluster phonological profiles and pairwise merge recommendations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::clustering::ClusterPartition;
use super::phono_score::PredictionSet;
use super::{EnhancedError, EnhancedResult};
use crate::datamodel::{ComponentKind, Phonology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub tau_overlap: f64,
    pub min_agreeing: usize,
    /// How many ranked labels per sample enter the cluster profile.
    pub top_k: usize,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig { tau_overlap: 0.5, min_agreeing: 3, top_k: 2 }
    }
}

pub type Profile = BTreeMap<ComponentKind, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAgreement {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecommendation {
    pub source: usize,
    pub target: usize,
    pub overlaps: BTreeMap<ComponentKind, f64>,
    pub agreeing_count: usize,
    pub mean_overlap: f64,
    pub strongest_properties: Vec<ComponentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_agreement: Option<CanonicalAgreement>,
    pub recommended: bool,
}

/// |A ∩ B| / |A ∪ B|, with two empty sets scoring 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

pub fn cluster_profile(
    members: &[String],
    predictions: &BTreeMap<String, PredictionSet>,
    top_k: usize,
) -> Option<Profile> {
    let mut profile = Profile::new();
    let mut any = false;
    for m in members {
        let Some(set) = predictions.get(m) else { continue };
        any = true;
        for (kind, pred) in set {
            profile.entry(*kind).or_default().extend(pred.ranked.iter().take(top_k).map(|r| r.label.clone()));
        }
    }
    any.then_some(profile)
}

/// A sample agrees when its top label matches the canonical one on at least
/// half of the canonical components it has predictions for.
pub fn sample_agrees(canonical: &Phonology, set: &PredictionSet) -> bool {
    let comparable: Vec<bool> =
        canonical.iter().filter_map(|(k, l)| set.get(k).map(|p| p.top() == Some(l.as_str()))).collect();
    !comparable.is_empty() && 2 * comparable.iter().filter(|&&b| b).count() >= comparable.len()
}

pub fn analyze_clusters_phonology(
    partition: &ClusterPartition,
    predictions: &BTreeMap<String, PredictionSet>,
    canonical: Option<&Phonology>,
    cfg: &OverlapConfig,
) -> EnhancedResult<Vec<MergeRecommendation>> {
    let mut profiles = Vec::new();
    for c in &partition.clusters {
        profiles.push(
            cluster_profile(&c.members, predictions, cfg.top_k).ok_or(EnhancedError::EmptyCluster(c.cluster_id))?,
        );
    }
    let agreement: Option<Vec<usize>> = canonical.map(|canon| {
        partition
            .clusters
            .iter()
            .map(|c| c.members.iter().filter(|m| predictions.get(*m).is_some_and(|s| sample_agrees(canon, s))).count())
            .collect()
    });
    let empty = BTreeSet::new();
    let mut recs = Vec::new();
    let n = partition.clusters.len();
    for i in 0..n {
        for j in i + 1..n {
            let (si, sj) = (partition.clusters[i].members.len(), partition.clusters[j].members.len());
            let (source, target) = if si < sj { (i, j) } else { (j, i) };
            let overlaps: BTreeMap<ComponentKind, f64> = ComponentKind::ALL
                .iter()
                .map(|&k| {
                    let a = profiles[source].get(&k).unwrap_or(&empty);
                    let b = profiles[target].get(&k).unwrap_or(&empty);
                    (k, jaccard(a, b))
                })
                .collect();
            let agreeing_count = overlaps.values().filter(|&&v| v >= cfg.tau_overlap).count();
            let mean_overlap = overlaps.values().sum::<f64>() / overlaps.len() as f64;
            let mut strongest: Vec<(ComponentKind, f64)> = overlaps.iter().map(|(k, v)| (*k, *v)).collect();
            strongest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            recs.push(MergeRecommendation {
                source,
                target,
                overlaps,
                agreeing_count,
                mean_overlap,
                strongest_properties: strongest.into_iter().map(|(k, _)| k).collect(),
                canonical_agreement: agreement
                    .as_ref()
                    .map(|a| CanonicalAgreement { source: a[source], target: a[target] }),
                recommended: agreeing_count >= cfg.min_agreeing,
            });
        }
    }
    recs.sort_by(|a, b| {
        b.agreeing_count
            .cmp(&a.agreeing_count)
            .then(b.mean_overlap.total_cmp(&a.mean_overlap))
            .then((a.source, a.target).cmp(&(b.source, b.target)))
    });
    Ok(recs)
}
