//! Per-segment gloss candidates from visual retrieval and phonological
//! agreement, reranked by the boosted-tree model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gbdt::Gbdt;
use super::phono_score::{score_phonological_agreement, PredictionSet};
use super::{EnhancedError, EnhancedResult};
use crate::basetools::{
    classify_handshape, classify_location, classify_movement, segment_signs, BaseToolError, DictionaryIndex,
    MovementConfig, PrototypeBank, Segment, SegmenterConfig,
};
use crate::datamodel::features::Hand;
use crate::datamodel::{ComponentKind, Dictionary, FrameFeatures, FrameSpan, SampleFeatures};
use crate::knowledge::{glosses_matching, KnowledgeGraph};

pub const FEATURE_NAMES: [&str; 5] =
    ["visual_similarity", "s_phono", "reciprocal_visual_rank", "visual_margin", "frequency_prior"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub k_visual: usize,
    /// Ranked labels per component considered for phonological injection.
    pub k_phono: usize,
    pub m: usize,
    /// Neighbours used by the component classifiers.
    pub classifier_k: usize,
    pub min_component_hits: usize,
    pub bypass_ranker: bool,
    pub movement: MovementConfig,
    pub segmenter: SegmenterConfig,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            k_visual: 5,
            k_phono: 3,
            m: 5,
            classifier_k: 5,
            min_component_hits: 2,
            bypass_ranker: false,
            movement: MovementConfig::default(),
            segmenter: SegmenterConfig::default(),
        }
    }
}

#[derive(Clone, Copy)]
pub struct EvidenceContext<'a> {
    pub dictionary: &'a Dictionary,
    pub index: &'a DictionaryIndex,
    pub graph: &'a KnowledgeGraph,
    pub bank: &'a PrototypeBank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Visual,
    Phonological,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// 1-based rank among all dictionary entries by visual similarity.
    pub visual_rank: usize,
    /// Relevance gap to the next candidate in the returned list.
    pub rank_margin: f64,
    pub source: CandidateSource,
    /// Whether the top predicted label equals the canonical one, per component.
    pub agreement: BTreeMap<ComponentKind, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceCandidate {
    pub gloss_id: String,
    pub visual_similarity: f64,
    pub s_phono: f64,
    pub feature_vector: Vec<f64>,
    pub learned_relevance: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvidence {
    pub segment: Segment,
    pub candidates: Vec<EvidenceCandidate>,
    pub phono_predictions: PredictionSet,
    /// Components that could not be predicted for this segment.
    pub missing_components: Vec<ComponentKind>,
    pub m: usize,
}

fn tolerate<T>(r: Result<T, BaseToolError>) -> Result<Option<T>, BaseToolError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(BaseToolError::MissingFeatures(_) | BaseToolError::TooShort { .. } | BaseToolError::MissingBankKind(_)) => {
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Runs the three classifiers over one span. Kinds that cannot be predicted
/// (no hand seen, too few frames, no prototypes) are omitted.
pub fn predict_components(
    frames: &FrameFeatures,
    bank: &PrototypeBank,
    k: usize,
    movement: &MovementConfig,
) -> EnhancedResult<PredictionSet> {
    let mut out = PredictionSet::new();
    let mut dominant = Hand::Right;
    if let Some(loc) = tolerate(classify_location(&frames.body, bank, k))? {
        dominant = loc.dominant;
        out.insert(ComponentKind::LocationMajor, loc.major);
        if let Some(minor) = loc.minor {
            out.insert(ComponentKind::LocationMinor, minor);
        }
    }
    let hand = if frames.hand(dominant).iter().any(Option::is_some) { dominant } else { dominant.other() };
    if let Some(preds) = tolerate(classify_handshape(frames.hand(hand), bank, k))? {
        for p in preds {
            out.insert(p.component_kind, p);
        }
    }
    let (l, r) = (frames.wrist_trajectory(Hand::Left), frames.wrist_trajectory(Hand::Right));
    if let Some(p) = tolerate(classify_movement(&l, &r, frames.frame_rate, bank, k, movement))? {
        out.insert(ComponentKind::Movement, p);
    }
    Ok(out)
}

pub fn segment_evidence(
    sample: &SampleFeatures,
    segment: Segment,
    ctx: EvidenceContext<'_>,
    cfg: &EvidenceConfig,
    ranker: Option<&Gbdt>,
) -> EnhancedResult<SegmentEvidence> {
    if !cfg.bypass_ranker && ranker.is_none() {
        return Err(EnhancedError::RankerUntrained);
    }
    let frames = sample.frames.slice(segment.start_frame, segment.end_frame);
    let predictions = predict_components(&frames, ctx.bank, cfg.classifier_k, &cfg.movement)?;
    let missing_components = ComponentKind::ALL.iter().copied().filter(|k| !predictions.contains_key(k)).collect();

    let visual = ctx.index.rank_all(&segment.pooled_embedding)?;
    let mut pool: BTreeMap<String, CandidateSource> =
        visual.iter().take(cfg.k_visual).map(|m| (m.gloss_id.clone(), CandidateSource::Visual)).collect();
    let allowed: BTreeMap<ComponentKind, Vec<String>> =
        predictions.iter().map(|(k, p)| (*k, p.labels().take(cfg.k_phono).map(str::to_string).collect())).collect();
    for (g, hits) in glosses_matching(ctx.graph, &allowed) {
        if hits >= cfg.min_component_hits && !allowed.is_empty() {
            pool.entry(g).and_modify(|s| *s = CandidateSource::Both).or_insert(CandidateSource::Phonological);
        }
    }

    let position: BTreeMap<&str, usize> = visual.iter().enumerate().map(|(i, m)| (m.gloss_id.as_str(), i)).collect();
    let mut candidates = Vec::with_capacity(pool.len());
    for (gloss_id, source) in pool {
        let Some(entry) = ctx.dictionary.get(&gloss_id) else { continue };
        let r = position[gloss_id.as_str()];
        let sim = visual[r].visual_similarity;
        let margin = visual.get(r + 1).map_or(0.0, |next| sim - next.visual_similarity);
        let s_phono = match score_phonological_agreement(&entry.canonical_phonology, &predictions) {
            Ok(s) => s,
            Err(EnhancedError::EmptyPhonology) => 0.0,
            Err(e) => return Err(e),
        };
        let feature_vector =
            vec![sim, s_phono, 1.0 / (r + 1) as f64, margin, ctx.dictionary.frequency_prior(&gloss_id)];
        let learned_relevance = match (cfg.bypass_ranker, ranker) {
            (false, Some(model)) => model.predict(&feature_vector)?,
            _ => (sim + s_phono) / 2.0,
        };
        let agreement = entry
            .canonical_phonology
            .iter()
            .filter_map(|(k, l)| predictions.get(k).map(|p| (*k, p.top() == Some(l.as_str()))))
            .collect();
        candidates.push(EvidenceCandidate {
            gloss_id,
            visual_similarity: sim,
            s_phono,
            feature_vector,
            learned_relevance,
            diagnostics: Diagnostics { visual_rank: r + 1, rank_margin: 0.0, source, agreement },
        });
    }
    candidates
        .sort_by(|a, b| b.learned_relevance.total_cmp(&a.learned_relevance).then_with(|| a.gloss_id.cmp(&b.gloss_id)));
    candidates.truncate(cfg.m);
    for i in 0..candidates.len() {
        let next = candidates.get(i + 1).map(|c| c.learned_relevance);
        candidates[i].diagnostics.rank_margin = next.map_or(0.0, |n| candidates[i].learned_relevance - n);
    }
    Ok(SegmentEvidence { segment, candidates, phono_predictions: predictions, missing_components, m: cfg.m })
}

/// Segments the sample (oracle mode when spans are given) and gathers
/// evidence for every segment.
pub fn collect_gloss_evidence(
    sample: &SampleFeatures,
    provided: Option<&[FrameSpan]>,
    ctx: EvidenceContext<'_>,
    cfg: &EvidenceConfig,
    ranker: Option<&Gbdt>,
) -> EnhancedResult<Vec<SegmentEvidence>> {
    if !cfg.bypass_ranker && ranker.is_none() {
        return Err(EnhancedError::RankerUntrained);
    }
    segment_signs(sample, provided, &cfg.segmenter)?
        .into_iter()
        .map(|s| segment_evidence(sample, s, ctx, cfg, ranker))
        .collect()
}

/// Pointwise training rows: label 1 for the true gloss, 0 for the rest.
pub fn ranker_rows(evidence: &SegmentEvidence, truth: &str) -> Vec<(Vec<f64>, f64)> {
    evidence
        .candidates
        .iter()
        .map(|c| (c.feature_vector.clone(), if c.gloss_id == truth { 1.0 } else { 0.0 }))
        .collect()
}
