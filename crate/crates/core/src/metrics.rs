//! Sequence and clustering evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basetools::Metric;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("no cluster sizes given")]
    EmptyInput,
    #[error("only one cluster; metric undefined")]
    SingleCluster,
    #[error("metric undefined: {0}")]
    DomainError(String),
    #[error("records and references do not align: {0}")]
    KeyMismatch(String),
}

fn norm(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.trim().to_lowercase()).collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest common subsequence length as a percentage of the reference length.
pub fn lcs_percent(reference: &[String], hypothesis: &[String]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let (r, h) = (norm(reference), norm(hypothesis));
    Ok(100.0 * lcs_len(&r, &h) as f64 / r.len() as f64)
}

/// Kendall tau-a between reference and hypothesis positions of the types
/// present in both; repeated types use their first occurrence. `None` when
/// fewer than two types match.
pub fn kendall_tau_positions(reference: &[String], hypothesis: &[String]) -> Option<f64> {
    let first = |seq: &[String]| {
        let mut pos: BTreeMap<String, usize> = BTreeMap::new();
        for (i, t) in norm(seq).into_iter().enumerate() {
            pos.entry(t).or_insert(i);
        }
        pos
    };
    let (rp, hp) = (first(reference), first(hypothesis));
    let matched: Vec<(usize, usize)> = rp.iter().filter_map(|(t, &r)| hp.get(t).map(|&h| (r, h))).collect();
    let n = matched.len();
    if n < 2 {
        return None;
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (matched[i].0 as i64 - matched[j].0 as i64).signum();
            let b = (matched[i].1 as i64 - matched[j].1 as i64).signum();
            score += a * b;
        }
    }
    Some(score as f64 / (n * (n - 1) / 2) as f64)
}

/// Shannon entropy in bits of the cluster-size distribution.
pub fn cluster_entropy_bits(sizes: &[usize]) -> Result<f64, MetricError> {
    let n: usize = sizes.iter().sum();
    if sizes.is_empty() || n == 0 {
        return Err(MetricError::EmptyInput);
    }
    if sizes.contains(&0) {
        return Err(MetricError::DomainError("cluster sizes must be positive".into()));
    }
    let h: f64 = sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

fn label_groups(assignment: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        g.entry(c).or_default().push(i);
    }
    g
}

/// Per-sample silhouette values under cosine distance.
pub fn silhouette_samples(x: &[Vec<f64>], assignment: &[usize]) -> Result<Vec<f64>, MetricError> {
    if x.len() != assignment.len() {
        return Err(MetricError::DomainError("one label per sample required".into()));
    }
    let groups = label_groups(assignment);
    if groups.len() < 2 {
        return Err(MetricError::SingleCluster);
    }
    if x.len() < 3 {
        return Err(MetricError::DomainError("need at least 3 samples".into()));
    }
    let d = |i: usize, j: usize| Metric::Cosine.distance(&x[i], &x[j]);
    Ok((0..x.len())
        .map(|i| {
            let own = &groups[&assignment[i]];
            if own.len() == 1 {
                return 0.0;
            }
            let a = own.iter().filter(|&&j| j != i).map(|&j| d(i, j)).sum::<f64>() / (own.len() - 1) as f64;
            let b = groups
                .iter()
                .filter(|(&c, _)| c != assignment[i])
                .map(|(_, m)| m.iter().map(|&j| d(i, j)).sum::<f64>() / m.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let den = a.max(b);
            if den == 0.0 {
                0.0
            } else {
                (b - a) / den
            }
        })
        .collect())
}

pub fn silhouette_mean(x: &[Vec<f64>], assignment: &[usize]) -> Result<f64, MetricError> {
    let s = silhouette_samples(x, assignment)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Between- over within-cluster dispersion with Euclidean scatter. Zero
/// within-cluster scatter gives positive infinity.
pub fn calinski_harabasz(x: &[Vec<f64>], assignment: &[usize]) -> Result<f64, MetricError> {
    if x.len() != assignment.len() || x.is_empty() {
        return Err(MetricError::DomainError("one label per sample required".into()));
    }
    let groups = label_groups(assignment);
    let (n, k) = (x.len(), groups.len());
    if k < 2 {
        return Err(MetricError::SingleCluster);
    }
    if n <= k {
        return Err(MetricError::DomainError("need more samples than clusters".into()));
    }
    let dim = x[0].len();
    let mean = |idx: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; dim];
        for &i in idx {
            for (a, v) in m.iter_mut().zip(&x[i]) {
                *a += v;
            }
        }
        m.iter().map(|v| v / idx.len() as f64).collect()
    };
    let all: Vec<usize> = (0..n).collect();
    let overall = mean(&all);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let (mut between, mut within) = (0.0, 0.0);
    for m in groups.values() {
        let c = mean(m);
        between += m.len() as f64 * sq(&c, &overall);
        within += m.iter().map(|&i| sq(&x[i], &c)).sum::<f64>();
    }
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEvalResult {
    pub lcs_percent: f64,
    pub kendall_tau: Option<f64>,
    pub matched_type_count: usize,
}

pub fn evaluate_sequence(reference: &[String], hypothesis: &[String]) -> Result<SequenceEvalResult, MetricError> {
    let r: BTreeSet<String> = norm(reference).into_iter().collect();
    let h: BTreeSet<String> = norm(hypothesis).into_iter().collect();
    Ok(SequenceEvalResult {
        lcs_percent: lcs_percent(reference, hypothesis)?,
        kendall_tau: kendall_tau_positions(reference, hypothesis),
        matched_type_count: r.intersection(&h).count(),
    })
}

/// One pseudo-gloss record reduced to what the corpus evaluation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sample_id: String,
    pub subset: String,
    pub hypothesis: Vec<String>,
    pub valid: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub evaluated: usize,
    pub rejected: usize,
    pub mean_lcs_percent: Option<f64>,
    /// Mean over samples whose tau is defined.
    pub mean_kendall_tau: Option<f64>,
    pub tau_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub subsets: BTreeMap<String, SubsetSummary>,
    pub combined: SubsetSummary,
    pub per_sample: BTreeMap<String, SequenceEvalResult>,
}

fn summarise(rows: &[&SequenceEvalResult], rejected: usize) -> SubsetSummary {
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let lcs: Vec<f64> = rows.iter().map(|r| r.lcs_percent).collect();
    let tau: Vec<f64> = rows.iter().filter_map(|r| r.kendall_tau).collect();
    SubsetSummary {
        evaluated: rows.len(),
        rejected,
        mean_lcs_percent: mean(&lcs),
        mean_kendall_tau: mean(&tau),
        tau_defined: tau.len(),
    }
}

/// Per-subset and combined means. Invalid records are excluded from means
/// and tallied as rejected.
pub fn evaluate_pseudogloss_corpus(
    records: &[SequenceRecord],
    references: &BTreeMap<String, Vec<String>>,
) -> Result<CorpusReport, MetricError> {
    let rec_keys: BTreeSet<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    let ref_keys: BTreeSet<&str> = references.keys().map(String::as_str).collect();
    if rec_keys != ref_keys || rec_keys.len() != records.len() {
        let only_rec: Vec<&str> = rec_keys.difference(&ref_keys).copied().collect();
        let only_ref: Vec<&str> = ref_keys.difference(&rec_keys).copied().collect();
        return Err(MetricError::KeyMismatch(format!(
            "without reference: {only_rec:?}; without record: {only_ref:?}; duplicates: {}",
            records.len() - rec_keys.len()
        )));
    }
    let mut per_sample = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        per_sample.insert(r.sample_id.clone(), evaluate_sequence(&references[&r.sample_id], &r.hypothesis)?);
    }
    let mut subsets = BTreeMap::new();
    let tags: BTreeSet<&str> = records.iter().map(|r| r.subset.as_str()).collect();
    for tag in tags {
        let rows: Vec<&SequenceEvalResult> =
            records.iter().filter(|r| r.subset == tag && r.valid).map(|r| &per_sample[&r.sample_id]).collect();
        let rejected = records.iter().filter(|r| r.subset == tag && !r.valid).count();
        subsets.insert(tag.to_string(), summarise(&rows, rejected));
    }
    let all: Vec<&SequenceEvalResult> = per_sample.values().collect();
    let combined = summarise(&all, records.iter().filter(|r| !r.valid).count());
    Ok(CorpusReport { subsets, combined, per_sample })
}

/// Clustering of one gloss: embeddings with their cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GlossClustering {
    pub gloss: String,
    pub embeddings: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvalResult {
    pub glosses: usize,
    pub ids_per_gloss: f64,
    pub total_ids: usize,
    pub entropy_bits: BTreeMap<String, f64>,
    pub mean_entropy_bits: f64,
    /// Instance-weighted over glosses where the silhouette is defined.
    pub silhouette: Option<f64>,
    /// Mean over glosses where the ratio is defined and finite.
    pub calinski_harabasz: Option<f64>,
    pub silhouette_glosses: usize,
    pub ch_glosses: usize,
}

pub fn evaluate_clusters(glosses: &[GlossClustering]) -> Result<ClusterEvalResult, MetricError> {
    if glosses.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut entropy = BTreeMap::new();
    let mut total_ids = 0;
    let mut sil_values = Vec::new();
    let mut sil_glosses = 0;
    let mut ch = Vec::new();
    for g in glosses {
        let groups = label_groups(&g.assignment);
        total_ids += groups.len();
        let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
        entropy.insert(g.gloss.clone(), cluster_entropy_bits(&sizes)?);
        if let Ok(s) = silhouette_samples(&g.embeddings, &g.assignment) {
            sil_values.extend(s);
            sil_glosses += 1;
        }
        if let Ok(v) = calinski_harabasz(&g.embeddings, &g.assignment) {
            if v.is_finite() {
                ch.push(v);
            }
        }
    }
    let n = glosses.len() as f64;
    Ok(ClusterEvalResult {
        glosses: glosses.len(),
        ids_per_gloss: total_ids as f64 / n,
        total_ids,
        mean_entropy_bits: entropy.values().sum::<f64>() / n,
        entropy_bits: entropy,
        silhouette: (!sil_values.is_empty()).then(|| sil_values.iter().sum::<f64>() / sil_values.len() as f64),
        calinski_harabasz: (!ch.is_empty()).then(|| ch.iter().sum::<f64>() / ch.len() as f64),
        silhouette_glosses: sil_glosses,
        ch_glosses: ch.len(),
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Plain-text table with one row per subset plus the combined row.
pub fn sequence_table(report: &CorpusReport) -> String {
    let mut rows = vec![["Subset".to_string(), "N".into(), "Rejected".into(), "LCS%".into(), "tau".into()]];
    let mut push = |name: &str, s: &SubsetSummary| {
        rows.push([
            name.to_string(),
            s.evaluated.to_string(),
            s.rejected.to_string(),
            fmt_opt(s.mean_lcs_percent, 2),
            fmt_opt(s.mean_kendall_tau, 3),
        ]);
    };
    for (k, s) in &report.subsets {
        push(k, s);
    }
    push("Combined", &report.combined);
    align(&rows)
}

pub fn cluster_table(rows: &[(String, ClusterEvalResult)]) -> String {
    let mut out = vec![[
        "Method".to_string(),
        "IDs/gloss".into(),
        "Total IDs".into(),
        "H (bits)".into(),
        "Silhouette".into(),
        "CH".into(),
    ]];
    for (name, r) in rows {
        out.push([
            name.clone(),
            format!("{:.2}", r.ids_per_gloss),
            r.total_ids.to_string(),
            format!("{:.3}", r.mean_entropy_bits),
            fmt_opt(r.silhouette, 4),
            fmt_opt(r.calinski_harabasz, 2),
        ]);
    }
    align(&out)
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
        if i == 0 {
            s.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (N - 1)));
            s.push('\n');
        }
    }
    s
}
