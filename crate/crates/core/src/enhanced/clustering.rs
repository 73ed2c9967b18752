//! Greedy thresholded clustering of sample embeddings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EnhancedError, EnhancedResult};
use crate::basetools::Metric;
use crate::datamodel::{Embedding, EmbeddingError};

pub const DEFAULT_TAU: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    pub centroid: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinEvent {
    pub key: String,
    pub cluster_id: usize,
    /// Distance to the centroid at join time; `None` when the key seeded the cluster.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
    pub distance_matrix: Vec<Vec<f64>>,
    /// Mean and max member-to-centroid distance per cluster.
    pub intra_mean: Vec<f64>,
    pub intra_max: Vec<f64>,
    /// Nearest other cluster and its centroid distance.
    pub nearest_inter: Vec<Option<(usize, f64)>>,
    pub lone_variants: Vec<usize>,
    pub tau: f64,
    #[serde(default)]
    pub join_log: Vec<JoinEvent>,
}

fn unit_of(e: &Embedding) -> EnhancedResult<Vec<f64>> {
    e.unit().map_err(EnhancedError::from)
}

fn mean_of(vectors: &[&Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    acc.iter().map(|a| a / vectors.len() as f64).collect()
}

fn check_inputs(samples: &[(String, Embedding)]) -> EnhancedResult<BTreeMap<&str, Vec<f64>>> {
    if samples.is_empty() {
        return Err(EnhancedError::EmptyInput);
    }
    let dim = samples[0].1.dim();
    let mut units = BTreeMap::new();
    for (k, e) in samples {
        if e.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, got: e.dim() }.into());
        }
        if units.insert(k.as_str(), unit_of(e)?).is_some() {
            return Err(EnhancedError::DuplicateKey(k.clone()));
        }
    }
    Ok(units)
}

/// Process keys in sorted order; join the nearest centroid when it is closer
/// than `tau`, otherwise seed a new cluster. Members are never reassigned.
pub fn visual_id_gloss(samples: &[(String, Embedding)], tau: f64) -> EnhancedResult<ClusterPartition> {
    if !(tau > 0.0 && tau < 2.0) {
        return Err(EnhancedError::InvalidThreshold(tau));
    }
    let units = check_inputs(samples)?;
    let mut groups: Vec<Vec<&str>> = Vec::new();
    let mut centroids: Vec<Vec<f64>> = Vec::new();
    let mut log = Vec::new();
    for (&key, u) in &units {
        let nearest = centroids.iter().enumerate().map(|(i, c)| (i, Metric::Cosine.distance(u, c))).fold(
            None,
            |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            },
        );
        match nearest {
            Some((i, d)) if d < tau => {
                groups[i].push(key);
                let members: Vec<&Vec<f64>> = groups[i].iter().map(|k| &units[k]).collect();
                centroids[i] = mean_of(&members);
                log.push(JoinEvent { key: key.into(), cluster_id: i, distance: Some(d) });
            }
            _ => {
                groups.push(vec![key]);
                centroids.push(u.clone());
                log.push(JoinEvent { key: key.into(), cluster_id: groups.len() - 1, distance: None });
            }
        }
    }
    let groups: Vec<Vec<String>> = groups.into_iter().map(|g| g.into_iter().map(String::from).collect()).collect();
    let mut p = ClusterPartition::from_groups(samples, &groups, tau)?;
    p.join_log = log;
    Ok(p)
}

impl ClusterPartition {
    /// Builds centroids and statistics for a given grouping of keys. Empty
    /// groups are dropped; cluster ids follow the group order.
    pub fn from_groups(samples: &[(String, Embedding)], groups: &[Vec<String>], tau: f64) -> EnhancedResult<Self> {
        let units = check_inputs(samples)?;
        let mut clusters = Vec::new();
        let mut unit_centroids = Vec::new();
        let mut intra_mean = Vec::new();
        let mut intra_max = Vec::new();
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let members: Vec<&Vec<f64>> = g
                .iter()
                .map(|k| units.get(k.as_str()).ok_or_else(|| EnhancedError::UnknownKey(k.clone())))
                .collect::<EnhancedResult<_>>()?;
            let c = mean_of(&members);
            let d: Vec<f64> = members.iter().map(|m| Metric::Cosine.distance(m, &c)).collect();
            intra_mean.push(d.iter().sum::<f64>() / d.len() as f64);
            intra_max.push(d.iter().fold(0.0f64, |a, &b| a.max(b)));
            clusters.push(Cluster {
                cluster_id: clusters.len(),
                members: g.clone(),
                centroid: Embedding::from_f64(&c)?,
            });
            unit_centroids.push(c);
        }
        let k = clusters.len();
        let mut dm = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let d = Metric::Cosine.distance(&unit_centroids[i], &unit_centroids[j]);
                dm[i][j] = d;
                dm[j][i] = d;
            }
        }
        let nearest_inter = (0..k)
            .map(|i| {
                (0..k).filter(|&j| j != i).map(|j| (j, dm[i][j])).fold(None, |best: Option<(usize, f64)>, (j, d)| {
                    match best {
                        Some((_, bd)) if bd <= d => best,
                        _ => Some((j, d)),
                    }
                })
            })
            .collect();
        let lone_variants = clusters.iter().filter(|c| c.members.len() == 1).map(|c| c.cluster_id).collect();
        Ok(ClusterPartition {
            clusters,
            distance_matrix: dm,
            intra_mean,
            intra_max,
            nearest_inter,
            lone_variants,
            tau,
            join_log: Vec::new(),
        })
    }

    pub fn groups(&self) -> Vec<Vec<String>> {
        self.clusters.iter().map(|c| c.members.clone()).collect()
    }

    pub fn cluster_of(&self, key: &str) -> Option<usize> {
        self.clusters.iter().position(|c| c.members.iter().any(|m| m == key))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.members.len()).collect()
    }

    /// True when every input key appears in exactly one cluster.
    pub fn is_partition_of<'a>(&self, keys: impl IntoIterator<Item = &'a str>) -> bool {
        let want: BTreeSet<&str> = keys.into_iter().collect();
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            for m in &c.members {
                if !seen.insert(m.as_str()) {
                    return false;
                }
            }
        }
        seen == want
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_pair_joins() {
        let s = vec![("a".to_string(), emb(&[1.0, 2.0])), ("b".to_string(), emb(&[1.0, 2.0]))];
        let p = visual_id_gloss(&s, 0.1).unwrap();
        assert_eq!(p.clusters.len(), 1);
        assert!(p.lone_variants.is_empty());
    }

    #[test]
    fn orthogonal_pair_stays_apart() {
        let s = vec![("a".to_string(), emb(&[1.0, 0.0])), ("b".to_string(), emb(&[0.0, 1.0]))];
        let p = visual_id_gloss(&s, 0.3).unwrap();
        assert_eq!(p.clusters.len(), 2);
        assert_eq!(p.lone_variants, vec![0, 1]);
        assert!((p.distance_matrix[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_bundles() {
        let mut s = Vec::new();
        for (i, off) in [0.0f32, 0.05, -0.05].iter().enumerate() {
            s.push((format!("x{i}"), emb(&[1.0, *off, 0.0])));
            s.push((format!("y{i}"), emb(&[*off, 1.0, 0.02])));
        }
        let p = visual_id_gloss(&s, 0.3).unwrap();
        assert_eq!(p.sizes(), vec![3, 3]);
        assert!((p.distance_matrix[0][1] - 1.0).abs() < 0.01);
        assert_eq!(p.distance_matrix[0][0], 0.0);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(visual_id_gloss(&[], 0.3), Err(EnhancedError::EmptyInput)));
        let z = vec![("a".to_string(), emb(&[0.0, 0.0]))];
        assert!(matches!(visual_id_gloss(&z, 0.3), Err(EnhancedError::Embedding(EmbeddingError::ZeroVector))));
        let d = vec![("a".to_string(), emb(&[1.0])), ("a".to_string(), emb(&[1.0]))];
        assert!(matches!(visual_id_gloss(&d, 0.3), Err(EnhancedError::DuplicateKey(_))));
    }

    proptest! {
        #[test]
        fn partition_and_join_bound(
            vs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..30),
            tau in 0.05f64..1.5,
        ) {
            prop_assume!(vs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
            let s: Vec<(String, Embedding)> = vs.iter().enumerate().map(|(i, v)| (format!("k{i:02}"), emb(v))).collect();
            let p = visual_id_gloss(&s, tau).unwrap();
            prop_assert!(p.is_partition_of(s.iter().map(|x| x.0.as_str())));
            prop_assert!(p.join_log.iter().all(|e| e.distance.is_none_or(|d| d < tau)));
            let again = visual_id_gloss(&s, tau).unwrap();
            prop_assert_eq!(&p, &again);
            for i in 0..p.clusters.len() {
                prop_assert_eq!(p.distance_matrix[i][i], 0.0);
                for j in 0..p.clusters.len() {
                    prop_assert_eq!(p.distance_matrix[i][j], p.distance_matrix[j][i]);
                }
            }
            for c in &p.clusters {
                prop_assert_eq!(c.members.len() == 1, p.lone_variants.contains(&c.cluster_id));
            }
        }
    }
}
