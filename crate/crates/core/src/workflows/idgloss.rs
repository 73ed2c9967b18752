//! ID glossing: refine the visual baseline partition of one gloss with
//! MERGE/KEEP operations, validate it and correct it at most once.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{params_or_default, schema_violations, EpisodeSummary, ValidationStatus};
use crate::basetools::{
    detect_handedness, HandednessConfig, HandednessLabel, HandednessReport, Metric, MovementConfig, PrototypeBank,
};
use crate::datamodel::{AnnotationRecord, ComponentKind, Dictionary, Embedding, FrameSpan, SampleFeatures};
use crate::enhanced::clustering::DEFAULT_TAU;
use crate::enhanced::evidence::predict_components;
use crate::enhanced::{
    analyze_clusters_phonology, visual_id_gloss, ClusterPartition, EnhancedError, MergeRecommendation, OverlapConfig,
    PredictionSet,
};
use crate::orchestrator::{
    run_episode, DecisionBackend, EpisodeConfig, EpisodeState, EpisodeTrace, Policy, Step, ToolError, ToolRegistry,
};

pub const RECORD_FORMAT: &str = "signagent-idgloss";
pub const RECORD_VERSION: u32 = 1;
pub const RECORD_SCHEMA: &str = include_str!("../../../../schemas/idgloss_record.v1.json");
pub const DEFAULT_CAP: usize = 10;

const INSTRUCTIONS: &str = "Refine the visual clustering of the samples of one gloss into ID-glosses. \
Call visual_id_gloss for the baseline, analyze_clusters_phonology for pairwise phonological overlap and \
detect_handedness for the samples. MERGE two clusters only when their distance is small relative to tau, \
enough phonological feature types agree (3 of 5 when one side is a singleton, otherwise 4 of 5) and their \
handedness is compatible; otherwise KEEP them and log the blocking statistics. Answer with \
{\"clusters\": [{\"cluster_id\", \"members\", \"justification\"}], \"adjustments\": [...], \
\"singleton_review\": [...], \"confidence\": c} assigning every sample exactly once.";

#[derive(Debug, Error)]
pub enum IdGlossError {
    #[error("gloss `{0}` has no samples")]
    NoSamples(String),
    #[error(transparent)]
    Enhanced(#[from] EnhancedError),
    #[error("sample `{0}`: {1}")]
    Sample(String, String),
}

/// One sample of the gloss: its key, features and pooled visual embedding.
#[derive(Debug, Clone)]
pub struct IdGlossSample {
    pub key: String,
    pub features: SampleFeatures,
    pub embedding: Embedding,
}

impl IdGlossSample {
    pub fn from_features(key: impl Into<String>, features: SampleFeatures) -> Result<Self, IdGlossError> {
        let key = key.into();
        let embedding = features.video_embedding().map_err(|e| IdGlossError::Sample(key.clone(), e.to_string()))?;
        Ok(IdGlossSample { key, features, embedding })
    }
}

pub struct IdGlossResources<'a> {
    pub dictionary: &'a Dictionary,
    pub bank: &'a PrototypeBank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdGlossConfig {
    pub episode: EpisodeConfig,
    /// Neighbours used by the component classifiers.
    pub classifier_k: usize,
    pub movement: MovementConfig,
    pub handedness: HandednessConfig,
    pub top_k: usize,
    /// Baseline clustering threshold.
    pub tau: f64,
}

impl Default for IdGlossConfig {
    fn default() -> Self {
        IdGlossConfig {
            episode: EpisodeConfig::new(DEFAULT_CAP),
            classifier_k: 5,
            movement: MovementConfig::default(),
            handedness: HandednessConfig::default(),
            top_k: OverlapConfig::default().top_k,
            tau: DEFAULT_TAU,
        }
    }
}

/// Thresholds of the scripted policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdGlossParams {
    pub tau: f64,
    /// Merge distance limit as a multiple of `tau`.
    pub distance_factor: f64,
    pub tau_overlap: f64,
    pub min_agree_singleton: usize,
    pub min_agree_multi: usize,
}

impl Default for IdGlossParams {
    fn default() -> Self {
        IdGlossParams {
            tau: DEFAULT_TAU,
            distance_factor: 1.5,
            tau_overlap: 0.5,
            min_agree_singleton: 3,
            min_agree_multi: 4,
        }
    }
}

/// Handedness of a cluster: the members' label when they all agree, mixed otherwise.
pub fn cluster_handedness<'a>(labels: impl IntoIterator<Item = &'a HandednessLabel>) -> Option<HandednessLabel> {
    let set: BTreeSet<HandednessLabel> = labels.into_iter().copied().collect();
    match set.len() {
        0 => None,
        1 => set.into_iter().next(),
        _ => Some(HandednessLabel::Mixed),
    }
}

/// Everything the three gates look at for one cluster pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GateInputs {
    pub distance: f64,
    pub overlaps: BTreeMap<ComponentKind, f64>,
    pub singleton: bool,
    pub hands: (Option<HandednessLabel>, Option<HandednessLabel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub distance: f64,
    pub distance_limit: f64,
    pub distance_ok: bool,
    pub agreeing: usize,
    pub required_agreeing: usize,
    pub phono_ok: bool,
    /// 1 for matching handedness, 0.5 when either side is mixed or unknown,
    /// 0 when incompatible.
    pub hand_credit: f64,
    pub hand_ok: bool,
    pub mirror: bool,
    pub merge: bool,
    pub blocking: Vec<String>,
}

impl GateOutcome {
    /// Share of the gates that agree with the decision taken.
    pub fn consistency(&self) -> f64 {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        if self.merge {
            (b(self.distance_ok) + b(self.phono_ok) + self.hand_credit) / 3.0
        } else {
            (b(!self.distance_ok) + b(!self.phono_ok) + (1.0 - self.hand_credit)) / 3.0
        }
    }
}

pub fn evaluate_gates(g: &GateInputs, p: &IdGlossParams) -> GateOutcome {
    use HandednessLabel::*;
    let distance_limit = p.distance_factor * p.tau;
    let distance_ok = g.distance < distance_limit;
    let agreeing = g.overlaps.values().filter(|&&v| v >= p.tau_overlap).count();
    let required_agreeing = if g.singleton { p.min_agree_singleton } else { p.min_agree_multi };
    let phono_ok = agreeing >= required_agreeing;
    let all_kinds = ComponentKind::ALL.len();
    let (hand_credit, hand_ok, mirror) = match g.hands {
        (None, _) | (_, None) | (Some(Mixed), _) | (_, Some(Mixed)) => (0.5, true, false),
        (Some(a), Some(b)) if a == b => (1.0, true, false),
        (Some(Left), Some(Right)) | (Some(Right), Some(Left)) => {
            let ok = agreeing == all_kinds && distance_ok;
            (if ok { 1.0 } else { 0.0 }, ok, true)
        }
        _ => (0.0, false, false),
    };
    let mut blocking = Vec::new();
    if !distance_ok {
        blocking.push(format!("D = {:.3} >= {:.3}", g.distance, distance_limit));
    }
    if !phono_ok {
        let j: Vec<String> = g.overlaps.iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
        blocking.push(format!("J_phi agreeing {agreeing}/{all_kinds} < {required_agreeing} ({})", j.join(", ")));
    }
    if !hand_ok {
        let show = |h: Option<HandednessLabel>| h.map_or("unknown".to_string(), |h| format!("{h:?}").to_lowercase());
        let why = if mirror { " (mirror pair needs every other gate at maximum)" } else { "" };
        blocking.push(format!("handedness {} vs {}{why}", show(g.hands.0), show(g.hands.1)));
    }
    GateOutcome {
        distance: g.distance,
        distance_limit,
        distance_ok,
        agreeing,
        required_agreeing,
        phono_ok,
        hand_credit,
        hand_ok,
        mirror,
        merge: distance_ok && phono_ok && hand_ok,
        blocking,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedCluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    #[serde(default)]
    pub justification: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionVerdict {
    pub valid: bool,
    pub duplicates: Vec<String>,
    pub missing: Vec<String>,
    /// Keys not among the samples of the gloss.
    pub unknown: Vec<String>,
    pub empty_clusters: Vec<usize>,
}

/// Every baseline key assigned exactly once, nothing else, no empty cluster.
pub fn validate_partition(keys: &[String], clusters: &[RefinedCluster]) -> PartitionVerdict {
    let want: BTreeSet<&str> = keys.iter().map(String::as_str).collect();
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for c in clusters {
        for m in &c.members {
            *count.entry(m).or_default() += 1;
        }
    }
    let duplicates: Vec<String> =
        count.iter().filter(|(k, &n)| n > 1 && want.contains(*k)).map(|(k, _)| k.to_string()).collect();
    let missing: Vec<String> = want.iter().filter(|k| !count.contains_key(*k)).map(|k| k.to_string()).collect();
    let unknown: Vec<String> = count.keys().filter(|k| !want.contains(*k)).map(|k| k.to_string()).collect();
    let empty_clusters: Vec<usize> = clusters.iter().filter(|c| c.members.is_empty()).map(|c| c.cluster_id).collect();
    PartitionVerdict {
        valid: duplicates.is_empty() && missing.is_empty() && unknown.is_empty() && empty_clusters.is_empty(),
        duplicates,
        missing,
        unknown,
        empty_clusters,
    }
}

/// Unit embeddings and handedness of every sample, used by the correction pass.
#[derive(Debug, Clone, Default)]
pub struct CorrectionEvidence {
    pub units: BTreeMap<String, Vec<f64>>,
    pub handedness: BTreeMap<String, HandednessLabel>,
}

fn compatible(a: Option<HandednessLabel>, b: Option<HandednessLabel>) -> bool {
    use HandednessLabel::*;
    !matches!((a, b), (Some(Both), Some(Left | Right)) | (Some(Left | Right), Some(Both)))
}

fn centroid(members: &[String], ev: &CorrectionEvidence) -> Option<Vec<f64>> {
    let vs: Vec<&Vec<f64>> = members.iter().filter_map(|m| ev.units.get(m)).collect();
    let first = vs.first()?;
    let mut acc = vec![0.0; first.len()];
    for v in &vs {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    Some(acc.iter().map(|a| a / vs.len() as f64).collect())
}

fn nearest(key: &[f64], cands: impl Iterator<Item = (usize, Vec<f64>)>) -> Option<usize> {
    cands
        .map(|(i, c)| (i, Metric::Cosine.distance(key, &c)))
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
}

/// One deterministic repair pass that never adds or removes clusters.
///
/// Unknown keys are dropped; a duplicated key stays in the cluster with the
/// nearest pre-pass centroid; a missing key joins the nearest
/// handedness-compatible cluster (any cluster if none is compatible); an
/// empty cluster takes a key from a cluster that can spare one. Ties go to
/// the lower cluster id. The result is valid whenever `1 <= K <= |S|`.
pub fn correction_pass(
    keys: &[String],
    clusters: &[RefinedCluster],
    ev: &CorrectionEvidence,
) -> (Vec<RefinedCluster>, Vec<String>) {
    let mut out: Vec<RefinedCluster> = clusters.to_vec();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..out.len()).collect();
    order.sort_by_key(|&i| (out[i].cluster_id, i));
    let centroids: Vec<Option<Vec<f64>>> = out.iter().map(|c| centroid(&c.members, ev)).collect();
    let want: BTreeSet<&str> = keys.iter().map(String::as_str).collect();

    for c in out.iter_mut() {
        let before = c.members.len();
        c.members.retain(|m| want.contains(m.as_str()));
        if c.members.len() != before {
            log.push(format!("cluster {}: dropped {} unknown key(s)", c.cluster_id, before - c.members.len()));
        }
    }

    for key in keys {
        let holders: Vec<usize> = order.iter().copied().filter(|&i| out[i].members.contains(key)).collect();
        let copies: usize = out.iter().map(|c| c.members.iter().filter(|m| *m == key).count()).sum();
        if copies < 2 {
            continue;
        }
        // distance to each holder's centroid without the disputed key itself
        let keep = ev
            .units
            .get(key)
            .and_then(|u| {
                let cands = holders.iter().filter_map(|&i| {
                    let others: Vec<String> = clusters[i].members.iter().filter(|m| *m != key).cloned().collect();
                    centroid(&others, ev).or_else(|| centroids[i].clone()).map(|c| (i, c))
                });
                nearest(u, cands)
            })
            .unwrap_or(holders[0]);
        for &i in &holders {
            if i == keep {
                let mut seen = false;
                out[i].members.retain(|m| m != key || !std::mem::replace(&mut seen, true));
            } else {
                out[i].members.retain(|m| m != key);
            }
        }
        log.push(format!("duplicate {key}: kept in cluster {}", out[keep].cluster_id));
    }

    let label_of = |members: &[String]| cluster_handedness(members.iter().filter_map(|m| ev.handedness.get(m)));
    for key in keys {
        if out.iter().any(|c| c.members.contains(key)) {
            continue;
        }
        let Some(u) = ev.units.get(key) else { continue };
        let with_centroid = || order.iter().copied().filter_map(|i| centroids[i].clone().map(|c| (i, c)));
        let kh = ev.handedness.get(key).copied();
        let target = nearest(u, with_centroid().filter(|(i, _)| compatible(kh, label_of(&out[*i].members))))
            .or_else(|| nearest(u, with_centroid()))
            .or_else(|| order.first().copied());
        if let Some(i) = target {
            out[i].members.push(key.clone());
            out[i].members.sort();
            log.push(format!("missing {key}: placed in cluster {}", out[i].cluster_id));
        }
    }

    for &e in &order {
        if !out[e].members.is_empty() {
            continue;
        }
        let spare = order
            .iter()
            .filter(|&&i| out[i].members.len() >= 2)
            .flat_map(|&i| out[i].members.iter().map(move |m| (i, m.clone())));
        // nearest key to the emptied cluster's old centroid; without one, the
        // key that fits its current cluster worst
        let scored: Vec<(f64, usize, String)> = match &centroids[e] {
            Some(c) => {
                spare.map(|(i, m)| (ev.units.get(&m).map_or(2.0, |u| Metric::Cosine.distance(u, c)), i, m)).collect()
            }
            None => spare
                .map(|(i, m)| {
                    let own = centroid(&out[i].members, ev);
                    let d = match (ev.units.get(&m), own) {
                        (Some(u), Some(c)) => Metric::Cosine.distance(u, &c),
                        _ => 0.0,
                    };
                    (-d, i, m)
                })
                .collect(),
        };
        let donor = scored.into_iter().min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.2.cmp(&b.2)));
        if let Some((_, i, m)) = donor {
            out[i].members.retain(|x| *x != m);
            log.push(format!("empty cluster {}: took {m} from cluster {}", out[e].cluster_id, out[i].cluster_id));
            out[e].members.push(m);
        }
    }
    (out, log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub tau: f64,
    pub clusters: Vec<ClusterAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdGlossRecord {
    pub format: String,
    pub version: u32,
    pub gloss: String,
    pub sample_keys: Vec<String>,
    pub baseline: BaselineSummary,
    pub clusters: Vec<RefinedCluster>,
    pub adjustments: Vec<Value>,
    pub singleton_review: Vec<Value>,
    pub confidence: f64,
    pub validation_status: ValidationStatus,
    pub validation: PartitionVerdict,
    /// Assignment as answered, kept whenever the correction pass ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_correction: Option<Vec<RefinedCluster>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correction_log: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<EpisodeSummary>,
}

impl IdGlossRecord {
    pub fn ids(&self) -> usize {
        self.clusters.iter().filter(|c| !c.members.is_empty()).count()
    }

    /// Cluster index per key, for valid records.
    pub fn assignment(&self) -> BTreeMap<String, usize> {
        self.clusters.iter().enumerate().flat_map(|(i, c)| c.members.iter().map(move |m| (m.clone(), i))).collect()
    }
}

impl AnnotationRecord for IdGlossRecord {
    fn schema_violations(&self) -> Vec<String> {
        let mut v = match serde_json::to_value(self) {
            Ok(value) => schema_violations(RECORD_SCHEMA, &value),
            Err(e) => vec![e.to_string()],
        };
        if self.validation_status.is_valid() && !validate_partition(&self.sample_keys, &self.clusters).valid {
            v.push("$.clusters".into());
        }
        if self.validation_status == ValidationStatus::Uncorrectable && self.pre_correction.is_none() {
            v.push("$.pre_correction".into());
        }
        v
    }
}

fn partition_summary(p: &ClusterPartition) -> Value {
    let clusters: Vec<Value> = p
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "cluster_id": c.cluster_id,
                "members": c.members,
                "size": c.members.len(),
                "intra_mean": p.intra_mean[i],
                "intra_max": p.intra_max[i],
                "nearest": p.nearest_inter[i].map(|(j, d)| json!({"cluster_id": j, "distance": d})),
            })
        })
        .collect();
    json!({"tau": p.tau, "clusters": clusters, "distance_matrix": p.distance_matrix, "lone_variants": p.lone_variants})
}

struct ToolState {
    partition: Option<ClusterPartition>,
    predictions: Option<BTreeMap<String, PredictionSet>>,
}

fn register_tools<'a>(
    registry: &mut ToolRegistry<'a>,
    gloss: &'a str,
    samples: &'a [IdGlossSample],
    res: &'a IdGlossResources<'a>,
    cfg: &'a IdGlossConfig,
    state: &'a Mutex<ToolState>,
) {
    let embedded: Vec<(String, Embedding)> = samples.iter().map(|s| (s.key.clone(), s.embedding.clone())).collect();
    registry
        .register_tool(
            "visual_id_gloss",
            "Greedy cosine clustering of the gloss's samples; a sample joins the nearest centroid closer than tau.",
            json!({"type": "object", "properties": {"tau": {"type": "number", "minimum": 0.0, "maximum": 2.0}}, "additionalProperties": false}),
            move |args| {
                let tau = args.get("tau").and_then(Value::as_f64).unwrap_or(DEFAULT_TAU);
                let p = visual_id_gloss(&embedded, tau).map_err(|e| ToolError::Failed(e.to_string()))?;
                let out = partition_summary(&p);
                state.lock().map_err(|_| ToolError::Failed("state poisoned".into()))?.partition = Some(p);
                Ok(out)
            },
        )
        .expect("fresh registry");
    registry
        .register_tool(
            "analyze_clusters_phonology",
            "Pairwise Jaccard overlap of the clusters' predicted phonological components from the last visual_id_gloss call.",
            json!({"type": "object", "properties": {"tau_overlap": {"type": "number", "minimum": 0.0, "maximum": 1.0}}, "additionalProperties": false}),
            move |args| {
                let mut st = state.lock().map_err(|_| ToolError::Failed("state poisoned".into()))?;
                if st.predictions.is_none() {
                    let mut preds = BTreeMap::new();
                    for s in samples {
                        let p = predict_components(&s.features.frames, res.bank, cfg.classifier_k, &cfg.movement)
                            .map_err(|e| ToolError::Failed(format!("{}: {e}", s.key)))?;
                        preds.insert(s.key.clone(), p);
                    }
                    st.predictions = Some(preds);
                }
                let partition = st.partition.as_ref().ok_or_else(|| ToolError::Failed("call visual_id_gloss first".into()))?;
                let ocfg = OverlapConfig {
                    tau_overlap: args.get("tau_overlap").and_then(Value::as_f64).unwrap_or(OverlapConfig::default().tau_overlap),
                    top_k: cfg.top_k,
                    ..OverlapConfig::default()
                };
                let canonical = res.dictionary.get(gloss).map(|e| &e.canonical_phonology).filter(|p| !p.is_empty());
                let recs = analyze_clusters_phonology(partition, st.predictions.as_ref().expect("filled above"), canonical, &ocfg)
                    .map_err(|e| ToolError::Failed(e.to_string()))?;
                Ok(json!({"tau_overlap": ocfg.tau_overlap, "recommendations": recs}))
            },
        )
        .expect("fresh registry");
    registry
        .register_tool(
            "detect_handedness",
            "Handedness label (left, right, both, mixed) and hand counts for each listed sample.",
            json!({"type": "object", "required": ["sample_ids"], "properties": {"sample_ids": {"type": "array", "items": {"type": "string"}, "minItems": 1}}, "additionalProperties": false}),
            move |args| {
                let mut reports = serde_json::Map::new();
                for id in args["sample_ids"].as_array().into_iter().flatten().filter_map(Value::as_str) {
                    let s = samples.iter().find(|s| s.key == id).ok_or_else(|| ToolError::Failed(format!("unknown sample `{id}`")))?;
                    let r = detect_handedness(FrameSpan::new(0, s.features.frames.len()), &s.features.frames, &cfg.handedness)
                        .map_err(|e| ToolError::Failed(format!("{id}: {e}")))?;
                    reports.insert(id.to_string(), serde_json::to_value(r).map_err(|e| ToolError::Failed(e.to_string()))?);
                }
                Ok(json!({"reports": reports}))
            },
        )
        .expect("fresh registry");
}

pub fn prompt(gloss: &str, samples: &[IdGlossSample], tau: f64) -> Value {
    let mut keys: Vec<&str> = samples.iter().map(|s| s.key.as_str()).collect();
    keys.sort_unstable();
    json!({
        "task": "idgloss",
        "instructions": INSTRUCTIONS,
        "gloss": gloss,
        "sample_ids": keys,
        "tau": tau,
    })
}

fn parse_answer(doc: Option<&Value>) -> Result<(Vec<RefinedCluster>, Vec<Value>, Vec<Value>, Option<f64>), String> {
    let doc = doc.ok_or("episode produced no final answer")?;
    let clusters: Vec<RefinedCluster> =
        serde_json::from_value(doc.get("clusters").cloned().ok_or("final answer lacks `clusters`")?)
            .map_err(|e| format!("clusters unreadable: {e}"))?;
    let list = |k: &str| doc.get(k).and_then(Value::as_array).cloned().unwrap_or_default();
    let confidence = doc.get("confidence").and_then(Value::as_f64);
    Ok((clusters, list("adjustments"), list("singleton_review"), confidence))
}

fn sample_handedness(samples: &[IdGlossSample], cfg: &HandednessConfig) -> BTreeMap<String, HandednessLabel> {
    samples
        .iter()
        .filter_map(|s| {
            detect_handedness(FrameSpan::new(0, s.features.frames.len()), &s.features.frames, cfg)
                .ok()
                .map(|r| (s.key.clone(), r.label))
        })
        .collect()
}

/// Runs one Task 2 episode for `gloss` and validates (and if needed corrects)
/// its answer. A single sample yields a trivial record without an episode.
pub fn run_idgloss_task(
    gloss: &str,
    samples: &[IdGlossSample],
    res: &IdGlossResources<'_>,
    backend: &mut dyn DecisionBackend,
    cfg: &IdGlossConfig,
) -> Result<(IdGlossRecord, Option<EpisodeTrace>), IdGlossError> {
    let tau = cfg.tau;
    if samples.is_empty() {
        return Err(IdGlossError::NoSamples(gloss.to_string()));
    }
    let embedded: Vec<(String, Embedding)> = samples.iter().map(|s| (s.key.clone(), s.embedding.clone())).collect();
    let baseline = visual_id_gloss(&embedded, tau)?;
    let mut sample_keys: Vec<String> = samples.iter().map(|s| s.key.clone()).collect();
    sample_keys.sort();
    let mut warnings = Vec::new();
    if res.dictionary.get(gloss).is_none() {
        warnings.push(format!("gloss `{gloss}` is not in the dictionary; no canonical phonology"));
    }
    let mut record = IdGlossRecord {
        format: RECORD_FORMAT.into(),
        version: RECORD_VERSION,
        gloss: gloss.to_string(),
        sample_keys: sample_keys.clone(),
        baseline: BaselineSummary {
            tau,
            clusters: baseline
                .clusters
                .iter()
                .map(|c| ClusterAssignment { cluster_id: c.cluster_id, members: c.members.clone() })
                .collect(),
        },
        clusters: Vec::new(),
        adjustments: Vec::new(),
        singleton_review: Vec::new(),
        confidence: 0.0,
        validation_status: ValidationStatus::Rejected,
        validation: PartitionVerdict::default(),
        pre_correction: None,
        correction_log: Vec::new(),
        failure_reason: None,
        warnings,
        episode: None,
    };
    if samples.len() == 1 {
        record.clusters = vec![RefinedCluster {
            cluster_id: 0,
            members: sample_keys.clone(),
            justification: json!({"note": "single sample"}),
        }];
        record.confidence = 1.0;
        record.validation = validate_partition(&sample_keys, &record.clusters);
        record.validation_status = ValidationStatus::Valid;
        return Ok((record, None));
    }

    let state = Mutex::new(ToolState { partition: None, predictions: None });
    let mut registry = ToolRegistry::new();
    register_tools(&mut registry, gloss, samples, res, cfg, &state);
    let outcome = run_episode(prompt(gloss, samples, tau), backend, &mut registry, cfg.episode);
    drop(registry);
    record.episode = Some(EpisodeSummary::of(&outcome.trace));
    if !outcome.completed() {
        record.failure_reason = outcome.trace.rejection.as_ref().map(|r| format!("{:?}: {}", r.kind, r.message));
        return Ok((record, Some(outcome.trace)));
    }
    let (clusters, adjustments, review, confidence) = match parse_answer(outcome.final_document.as_ref()) {
        Ok(parts) => parts,
        Err(reason) => {
            record.failure_reason = Some(reason);
            (Vec::new(), Vec::new(), Vec::new(), None)
        }
    };
    record.adjustments = adjustments;
    record.singleton_review = review;
    record.confidence = match confidence {
        Some(c) if c.is_finite() => c.clamp(0.0, 1.0),
        _ => {
            record.warnings.push("no confidence given; recorded as 0".into());
            0.0
        }
    };
    let verdict = validate_partition(&sample_keys, &clusters);
    if verdict.valid {
        record.clusters = clusters;
        record.validation = verdict;
        record.validation_status = ValidationStatus::Valid;
        return Ok((record, Some(outcome.trace)));
    }
    let ev = CorrectionEvidence {
        units: samples.iter().filter_map(|s| s.embedding.unit().ok().map(|u| (s.key.clone(), u))).collect(),
        handedness: sample_handedness(samples, &cfg.handedness),
    };
    let (corrected, log) = correction_pass(&sample_keys, &clusters, &ev);
    record.validation = validate_partition(&sample_keys, &corrected);
    record.validation_status =
        if record.validation.valid { ValidationStatus::Corrected } else { ValidationStatus::Uncorrectable };
    if !record.validation.valid && record.failure_reason.is_none() {
        record.failure_reason = Some("partition still invalid after the correction pass".into());
    }
    record.pre_correction = Some(clusters);
    record.correction_log = log;
    record.clusters = corrected;
    Ok((record, Some(outcome.trace)))
}

/// Scripted Task 2 policy: baseline, phonology, handedness, then apply the
/// three gates to every cluster pair and merge transitively.
pub struct IdGlossPolicy {
    pub params: IdGlossParams,
}

impl IdGlossPolicy {
    pub fn from_params(params: &Value) -> Self {
        IdGlossPolicy { params: params_or_default(params, "idgloss") }
    }
}

#[derive(Deserialize)]
struct BaselineView {
    tau: f64,
    clusters: Vec<ClusterAssignment>,
    distance_matrix: Vec<Vec<f64>>,
}

fn give_up(reason: &str) -> Step {
    Step::final_answer(reason, json!({"clusters": [], "adjustments": [], "singleton_review": [], "confidence": 0.0}))
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

/// The scripted decision procedure over tool results; exposed for tests.
pub fn refine(
    baseline: &[ClusterAssignment],
    distance_matrix: &[Vec<f64>],
    recommendations: &[MergeRecommendation],
    handedness: &BTreeMap<String, HandednessLabel>,
    params: &IdGlossParams,
) -> Value {
    let k = baseline.len();
    let hands: Vec<Option<HandednessLabel>> =
        baseline.iter().map(|c| cluster_handedness(c.members.iter().filter_map(|m| handedness.get(m)))).collect();
    let mut pairs: Vec<(usize, usize, GateOutcome, &MergeRecommendation)> = recommendations
        .iter()
        .filter(|r| r.source < k && r.target < k && r.source != r.target)
        .map(|r| {
            let (a, b) = (r.source.min(r.target), r.source.max(r.target));
            let g = GateInputs {
                distance: distance_matrix[a][b],
                overlaps: r.overlaps.clone(),
                singleton: baseline[a].members.len() == 1 || baseline[b].members.len() == 1,
                hands: (hands[a], hands[b]),
            };
            (a, b, evaluate_gates(&g, params), r)
        })
        .collect();
    pairs.sort_by(|x, y| x.2.distance.total_cmp(&y.2.distance).then((x.0, x.1).cmp(&(y.0, y.1))));

    let mut parent: Vec<usize> = (0..k).collect();
    let mut adjustments = Vec::new();
    for (a, b, g, r) in &pairs {
        if g.merge {
            let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let op = if g.merge { "MERGE" } else { "KEEP" };
        let rationale = if g.merge {
            format!(
                "D = {:.3} < {:.3}, {}/{} feature types agree (need {}), handedness credit {:.1}",
                g.distance,
                g.distance_limit,
                g.agreeing,
                ComponentKind::ALL.len(),
                g.required_agreeing,
                g.hand_credit
            )
        } else {
            format!("blocked by {}", g.blocking.join("; "))
        };
        adjustments.push(json!({
            "operation": op,
            "clusters": [baseline[*a].cluster_id, baseline[*b].cluster_id],
            "statistics": {
                "distance": g.distance,
                "distance_limit": g.distance_limit,
                "agreeing": g.agreeing,
                "required_agreeing": g.required_agreeing,
                "overlaps": r.overlaps,
                "mean_overlap": r.mean_overlap,
                "handedness": [hands[*a], hands[*b]],
                "hand_credit": g.hand_credit,
            },
            "blocking": g.blocking,
            "rationale": rationale,
        }));
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..k {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let clusters: Vec<Value> = groups
        .values()
        .map(|idx| {
            let mut members: Vec<String> = idx.iter().flat_map(|&i| baseline[i].members.clone()).collect();
            members.sort();
            let id = idx.iter().map(|&i| baseline[i].cluster_id).min().unwrap_or(0);
            let merged: Vec<Value> = pairs
                .iter()
                .filter(|(a, b, g, _)| g.merge && idx.contains(a) && idx.contains(b))
                .map(|(a, b, g, _)| json!({"clusters": [baseline[*a].cluster_id, baseline[*b].cluster_id], "distance": g.distance, "agreeing": g.agreeing}))
                .collect();
            let outside = pairs
                .iter()
                .filter(|(a, b, _, _)| idx.contains(a) != idx.contains(b))
                .map(|(a, b, g, r)| json!({"clusters": [baseline[*a].cluster_id, baseline[*b].cluster_id], "distance": g.distance, "mean_overlap": r.mean_overlap, "agreeing": g.agreeing}))
                .next();
            let hand = cluster_handedness(idx.iter().filter_map(|&i| hands[i].as_ref()));
            json!({
                "cluster_id": id,
                "members": members,
                "justification": {
                    "baseline_clusters": idx.iter().map(|&i| baseline[i].cluster_id).collect::<Vec<_>>(),
                    "merges": merged,
                    "nearest_kept": outside,
                    "handedness": hand,
                },
            })
        })
        .collect();

    let singleton_review: Vec<Value> = (0..k)
        .filter(|&i| baseline[i].members.len() == 1)
        .map(|i| {
            let best = pairs
                .iter()
                .filter(|(a, b, _, _)| *a == i || *b == i)
                .find(|(_, _, g, _)| g.merge)
                .or_else(|| pairs.iter().find(|(a, b, _, _)| *a == i || *b == i));
            let root = find(&mut parent, i);
            let absorbed = groups.get(&root).is_some_and(|g| g.len() > 1);
            json!({
                "cluster_id": baseline[i].cluster_id,
                "member": baseline[i].members[0],
                "outcome": if absorbed { "absorbed" } else { "kept" },
                "against": best.map(|(a, b, _, _)| baseline[if *a == i { *b } else { *a }].cluster_id),
                "distance": best.map(|(_, _, g, _)| g.distance),
                "agreeing": best.map(|(_, _, g, _)| g.agreeing),
                "blocking": best.map(|(_, _, g, _)| g.blocking.clone()).unwrap_or_default(),
            })
        })
        .collect();

    // Decisive operation per baseline cluster: its closest merge if any,
    // otherwise the KEEP against its nearest neighbour.
    let confidence = if pairs.is_empty() {
        1.0
    } else {
        let per: Vec<f64> = (0..k)
            .filter_map(|i| {
                let mine = || pairs.iter().filter(move |(a, b, _, _)| *a == i || *b == i);
                mine().find(|(_, _, g, _)| g.merge).or_else(|| mine().next()).map(|(_, _, g, _)| g.consistency())
            })
            .collect();
        if per.is_empty() {
            1.0
        } else {
            per.iter().sum::<f64>() / per.len() as f64
        }
    };
    json!({"clusters": clusters, "adjustments": adjustments, "singleton_review": singleton_review, "confidence": confidence})
}

impl Policy for IdGlossPolicy {
    fn name(&self) -> &str {
        "idgloss"
    }

    fn decide(&self, state: &EpisodeState) -> Step {
        let Some(base) = state.tool_results("visual_id_gloss").last() else {
            if state.tool_calls("visual_id_gloss") == 0 {
                let tau = state.prompt.get("tau").and_then(Value::as_f64).unwrap_or(self.params.tau);
                return Step::tool("Build the visual baseline.", "visual_id_gloss", json!({"tau": tau}));
            }
            return give_up("visual_id_gloss failed");
        };
        let Ok(view) = serde_json::from_value::<BaselineView>(base.clone()) else {
            return give_up("baseline unreadable");
        };
        if view.clusters.len() <= 1 {
            let clusters: Vec<Value> = view
                .clusters
                .iter()
                .map(|c| json!({"cluster_id": c.cluster_id, "members": c.members, "justification": {"note": "baseline has a single cluster"}}))
                .collect();
            return Step::final_answer(
                "One visual cluster; nothing to refine.",
                json!({"clusters": clusters, "adjustments": [], "singleton_review": [], "confidence": 1.0}),
            );
        }
        let Some(phono) = state.tool_results("analyze_clusters_phonology").last() else {
            if state.tool_calls("analyze_clusters_phonology") == 0 {
                return Step::tool(
                    format!("{} clusters; compare their phonology.", view.clusters.len()),
                    "analyze_clusters_phonology",
                    json!({"tau_overlap": self.params.tau_overlap}),
                );
            }
            return give_up("analyze_clusters_phonology failed");
        };
        let Some(hand) = state.tool_results("detect_handedness").last() else {
            if state.tool_calls("detect_handedness") == 0 {
                let ids: Vec<&String> = view.clusters.iter().flat_map(|c| c.members.iter()).collect();
                return Step::tool(
                    "Check handedness of every sample.",
                    "detect_handedness",
                    json!({"sample_ids": ids}),
                );
            }
            return give_up("detect_handedness failed");
        };
        let recs: Vec<MergeRecommendation> =
            serde_json::from_value(phono["recommendations"].clone()).unwrap_or_default();
        let reports: BTreeMap<String, HandednessReport> =
            serde_json::from_value(hand["reports"].clone()).unwrap_or_default();
        let labels: BTreeMap<String, HandednessLabel> = reports.into_iter().map(|(k, r)| (k, r.label)).collect();
        let params = IdGlossParams { tau: view.tau, ..self.params };
        let doc = refine(&view.clusters, &view.distance_matrix, &recs, &labels, &params);
        let merges =
            doc["adjustments"].as_array().map_or(0, |a| a.iter().filter(|x| x["operation"] == "MERGE").count());
        Step::final_answer(format!("{merges} merge(s) over {} baseline clusters.", view.clusters.len()), doc)
    }
}
