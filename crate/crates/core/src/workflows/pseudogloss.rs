//! Pseudo-gloss annotation: reorder the lemmatised sentence tokens to follow
//! the signing, one token per detected segment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{params_or_default, schema_violations, EpisodeSummary, ValidationStatus};
use crate::basetools::{sign_lemma, DictionaryIndex, LemmaTable, PrototypeBank};
use crate::datamodel::dictionary::gloss_word;
use crate::datamodel::{AnnotationRecord, Dictionary, FrameSpan, Phonology, SampleFeatures, SampleRecord};
use crate::enhanced::{
    collect_gloss_evidence, score_phonological_agreement, EvidenceConfig, EvidenceContext, Gbdt, SegmentEvidence,
};
use crate::knowledge::{query_linguistic_graph, KnowledgeGraph};
use crate::orchestrator::{
    run_episode, DecisionBackend, EpisodeConfig, EpisodeState, EpisodeTrace, Policy, Step, ToolError, ToolRegistry,
};

pub const RECORD_FORMAT: &str = "signagent-pseudogloss";
pub const RECORD_VERSION: u32 = 1;
pub const RECORD_SCHEMA: &str = include_str!("../../../../schemas/pseudogloss_record.v1.json");
pub const DEFAULT_CAP: usize = 12;
pub const MAX_EVIDENCE_CALLS: usize = 2;

const INSTRUCTIONS: &str = "Order the pseudo-gloss tokens of the sentence to follow the signing. \
Call sign_lemma once to obtain the tokens, lookup_lexicon for their dictionary entries and \
collect_gloss_evidence (at most twice) for per-segment gloss candidates. Assign each token to at most \
one segment, then answer with {\"tokens\": [...], \"alignment\": [...]} where tokens lists every input \
token exactly once, in the temporal order of the assigned segments.";

#[derive(Debug, Error, PartialEq)]
pub enum WorkflowError {
    #[error("candidate `{0}` is not in the segment's evidence")]
    CandidateNotInEvidence(String),
    #[error("sample `{0}` has no sentence")]
    MissingSentence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueWeights {
    pub visual: f64,
    pub phono: f64,
    pub activity: f64,
    pub temporal: f64,
    pub semantic: f64,
}

impl Default for CueWeights {
    fn default() -> Self {
        CueWeights { visual: 0.35, phono: 0.35, activity: 0.1, temporal: 0.1, semantic: 0.1 }
    }
}

impl CueWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.visual, self.phono, self.activity, self.temporal, self.semantic];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("cue weights must be finite and non-negative".into());
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err("cue weights must not all be zero".into());
        }
        Ok(())
    }
}

/// The five cue values for one (token, segment, candidate) triple, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cues {
    pub visual: f64,
    pub phono: f64,
    pub activity: f64,
    pub temporal: f64,
    pub semantic: f64,
}

impl Cues {
    pub fn score(&self, w: &CueWeights) -> f64 {
        w.visual * self.visual
            + w.phono * self.phono
            + w.activity * self.activity
            + w.temporal * self.temporal
            + w.semantic * self.semantic
    }
}

pub fn default_function_words() -> Vec<String> {
    [
        "a", "an", "the", "to", "of", "in", "on", "at", "by", "for", "and", "or", "but", "not", "no", "yes", "is",
        "be", "it", "he", "she", "we", "you", "they", "i", "me", "my", "your", "what", "who", "where", "when", "why",
        "how",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Everything the scorer needs besides the triple itself.
pub struct ScoringContext<'a> {
    pub tokens: &'a [String],
    pub lexicon: &'a BTreeMap<String, Vec<Phonology>>,
    pub function_words: &'a BTreeSet<String>,
    pub median_segment_len: f64,
    pub weights: CueWeights,
}

fn is_function_like(token: &str, fw: &BTreeSet<String>) -> bool {
    token.chars().count() <= 3 || fw.contains(token)
}

pub fn median_len(evidence: &[SegmentEvidence]) -> f64 {
    let mut l: Vec<usize> = evidence.iter().map(|e| e.segment.len()).collect();
    l.sort_unstable();
    match l.len() {
        0 => 0.0,
        n if n % 2 == 1 => l[n / 2] as f64,
        n => (l[n / 2 - 1] + l[n / 2]) as f64 / 2.0,
    }
}

/// Best discounted agreement between the segment's predictions and any
/// dictionary entry of the token.
pub fn token_phono(token: &str, seg: &SegmentEvidence, lexicon: &BTreeMap<String, Vec<Phonology>>) -> f64 {
    lexicon
        .get(token)
        .into_iter()
        .flatten()
        .filter_map(|p| score_phonological_agreement(p, &seg.phono_predictions).ok())
        .fold(0.0, f64::max)
}

pub fn score_assignment(
    token: &str,
    seg: &SegmentEvidence,
    gloss_id: &str,
    ctx: &ScoringContext<'_>,
) -> Result<(f64, Cues), WorkflowError> {
    let cand = seg
        .candidates
        .iter()
        .find(|c| c.gloss_id == gloss_id)
        .ok_or_else(|| WorkflowError::CandidateNotInEvidence(gloss_id.to_string()))?;
    let word = gloss_word(gloss_id);
    let temporal = if is_function_like(token, ctx.function_words) {
        if (seg.segment.len() as f64) < ctx.median_segment_len {
            1.0
        } else {
            0.25
        }
    } else {
        0.5
    };
    let semantic = if word == token {
        1.0
    } else if ctx.tokens.contains(&word) {
        0.0
    } else {
        0.5
    };
    let cues = Cues {
        visual: cand.visual_similarity.clamp(0.0, 1.0),
        phono: token_phono(token, seg, ctx.lexicon).clamp(0.0, 1.0),
        activity: seg.segment.activity_fraction().clamp(0.0, 1.0),
        temporal,
        semantic,
    };
    Ok((cues.score(&ctx.weights), cues))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub token: String,
    pub token_index: usize,
    #[serde(default)]
    pub segment: Option<FrameSpan>,
    #[serde(default)]
    pub gloss_id: Option<String>,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub cues: Option<Cues>,
    #[serde(default)]
    pub justification: String,
}

/// The final answer of a pseudo-gloss episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDoc {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub alignment: Vec<AlignmentEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignParams {
    pub weights: CueWeights,
    pub function_words: Vec<String>,
    /// Let one segment receive several tokens.
    pub allow_shared_segments: bool,
}

impl Default for AssignParams {
    fn default() -> Self {
        AssignParams {
            weights: CueWeights::default(),
            function_words: default_function_words(),
            allow_shared_segments: false,
        }
    }
}

/// Greedy global assignment: the best-scoring (token, segment, candidate)
/// triple is fixed first, then the next best among free tokens and segments.
/// Ties go to the smaller gloss id, then the earlier segment, then the earlier
/// token. Unassigned tokens are appended in sentence order.
pub fn assign_tokens(
    tokens: &[String],
    evidence: &[SegmentEvidence],
    lexicon: &BTreeMap<String, Vec<Phonology>>,
    params: &AssignParams,
) -> AssignmentDoc {
    let fw: BTreeSet<String> = params.function_words.iter().map(|w| w.to_lowercase()).collect();
    let ctx = ScoringContext {
        tokens,
        lexicon,
        function_words: &fw,
        median_segment_len: median_len(evidence),
        weights: params.weights,
    };
    struct Triple {
        score: f64,
        cues: Cues,
        token: usize,
        seg: usize,
        gloss: usize,
    }
    let mut triples = Vec::new();
    for (ti, t) in tokens.iter().enumerate() {
        for (si, seg) in evidence.iter().enumerate() {
            for (ci, c) in seg.candidates.iter().enumerate() {
                if let Ok((score, cues)) = score_assignment(t, seg, &c.gloss_id, &ctx) {
                    triples.push(Triple { score, cues, token: ti, seg: si, gloss: ci });
                }
            }
        }
    }
    let gid = |t: &Triple| evidence[t.seg].candidates[t.gloss].gloss_id.as_str();
    triples.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| gid(a).cmp(gid(b)))
            .then_with(|| evidence[a.seg].segment.start_frame.cmp(&evidence[b.seg].segment.start_frame))
            .then_with(|| a.token.cmp(&b.token))
    });

    let mut token_done = vec![false; tokens.len()];
    let mut seg_used = vec![false; evidence.len()];
    let mut chosen: Vec<&Triple> = Vec::new();
    for t in &triples {
        if token_done[t.token] || (seg_used[t.seg] && !params.allow_shared_segments) {
            continue;
        }
        token_done[t.token] = true;
        seg_used[t.seg] = true;
        chosen.push(t);
    }
    chosen.sort_by_key(|t| (evidence[t.seg].segment.start_frame, t.token));

    let mut warnings = Vec::new();
    if tokens.len() > evidence.len() && !params.allow_shared_segments {
        warnings.push(format!("{} tokens but only {} segments", tokens.len(), evidence.len()));
    }
    let mut alignment: Vec<AlignmentEntry> = chosen
        .iter()
        .map(|t| {
            let seg = &evidence[t.seg];
            let c = &seg.candidates[t.gloss];
            AlignmentEntry {
                token: tokens[t.token].clone(),
                token_index: t.token,
                segment: Some(seg.segment.span()),
                gloss_id: Some(c.gloss_id.clone()),
                score: Some(t.score),
                cues: Some(t.cues),
                justification: format!(
                    "{} via {} (visual rank {}): visual {:.3}, phono {:.3}, activity {:.2}, temporal {:.2}, semantic {:.1}",
                    tokens[t.token],
                    c.gloss_id,
                    c.diagnostics.visual_rank,
                    t.cues.visual,
                    t.cues.phono,
                    t.cues.activity,
                    t.cues.temporal,
                    t.cues.semantic
                ),
            }
        })
        .collect();
    for (i, t) in tokens.iter().enumerate().filter(|(i, _)| !token_done[*i]) {
        warnings.push(format!("token `{t}` left without a segment"));
        alignment.push(AlignmentEntry {
            token: t.clone(),
            token_index: i,
            segment: None,
            gloss_id: None,
            score: None,
            cues: None,
            justification: "no free segment; kept in sentence order".into(),
        });
    }
    AssignmentDoc { tokens: alignment.iter().map(|a| a.token.clone()).collect(), alignment, warnings }
}

/// Multiset comparison of input and output tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenVerdict {
    pub valid: bool,
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

pub fn validate_tokens(input: &[String], output: &[String]) -> TokenVerdict {
    let mut count: BTreeMap<&str, i64> = BTreeMap::new();
    for t in input {
        *count.entry(t).or_default() += 1;
    }
    for t in output {
        *count.entry(t).or_default() -= 1;
    }
    let (mut missing, mut extra) = (Vec::new(), Vec::new());
    for (t, c) in count {
        let target = if c > 0 { &mut missing } else { &mut extra };
        target.extend(std::iter::repeat_n(t.to_string(), c.unsigned_abs() as usize));
    }
    TokenVerdict { valid: missing.is_empty() && extra.is_empty(), missing, extra }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGlossRecord {
    pub format: String,
    pub version: u32,
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    pub sentence: String,
    /// Tokens produced by the lemmatiser; the conservation target.
    pub input_tokens: Vec<String>,
    /// Output sequence in temporal order.
    pub tokens: Vec<String>,
    pub alignment: Vec<AlignmentEntry>,
    pub validation_status: ValidationStatus,
    pub validation: TokenVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    pub warnings: Vec<String>,
    pub episode: EpisodeSummary,
}

impl AnnotationRecord for PseudoGlossRecord {
    fn schema_violations(&self) -> Vec<String> {
        let mut v = match serde_json::to_value(self) {
            Ok(value) => schema_violations(RECORD_SCHEMA, &value),
            Err(e) => vec![e.to_string()],
        };
        if self.validation_status == ValidationStatus::Valid && !validate_tokens(&self.input_tokens, &self.tokens).valid
        {
            v.push("$.tokens".into());
        }
        v
    }
}

pub struct PseudoGlossResources<'a> {
    pub dictionary: &'a Dictionary,
    pub index: &'a DictionaryIndex,
    pub graph: &'a KnowledgeGraph,
    pub bank: &'a PrototypeBank,
    pub lemmas: &'a LemmaTable,
    pub ranker: Option<&'a Gbdt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoGlossConfig {
    pub evidence: EvidenceConfig,
    pub episode: EpisodeConfig,
}

impl Default for PseudoGlossConfig {
    fn default() -> Self {
        PseudoGlossConfig { evidence: EvidenceConfig::default(), episode: EpisodeConfig::new(DEFAULT_CAP) }
    }
}

fn usize_arg(args: &Value, key: &str, default: usize) -> usize {
    args.get(key).and_then(Value::as_u64).map_or(default, |v| v as usize)
}

/// Registers the Task 1 tools over one sample.
pub fn register_tools<'a>(
    registry: &mut ToolRegistry<'a>,
    record: &'a SampleRecord,
    sample: &'a SampleFeatures,
    res: &'a PseudoGlossResources<'a>,
    cfg: &'a PseudoGlossConfig,
) {
    let lemmas = res.lemmas;
    registry
        .register_tool(
            "sign_lemma",
            "Normalise a spoken-language sentence into pseudo-gloss tokens (lowercased lemmas, stopwords removed).",
            json!({"type": "object", "required": ["sentence"], "properties": {"sentence": {"type": "string"}}, "additionalProperties": false}),
            move |args| Ok(json!({"tokens": sign_lemma(args["sentence"].as_str().unwrap_or(""), lemmas)})),
        )
        .expect("fresh registry");
    let dict = res.dictionary;
    registry
        .register_tool(
            "lookup_lexicon",
            "Dictionary entries (gloss id, canonical phonology, handedness) for each word.",
            json!({"type": "object", "required": ["words"], "properties": {"words": {"type": "array", "items": {"type": "string"}}}, "additionalProperties": false}),
            move |args| {
                let mut out = serde_json::Map::new();
                for w in args["words"].as_array().into_iter().flatten().filter_map(Value::as_str) {
                    let entries: Vec<Value> = dict
                        .glosses_for_word(&w.to_lowercase())
                        .into_iter()
                        .map(|e| json!({"gloss_id": e.gloss_id, "canonical_phonology": e.canonical_phonology, "handedness": e.handedness}))
                        .collect();
                    out.insert(w.to_string(), Value::Array(entries));
                }
                Ok(json!({"entries": out}))
            },
        )
        .expect("fresh registry");
    let graph = res.graph;
    registry
        .register_tool(
            "query_linguistic_graph",
            "Nodes whose labels contain the terms, with their neighbourhood up to the given radius.",
            json!({"type": "object", "required": ["terms"], "properties": {"terms": {"type": "array", "items": {"type": "string"}, "minItems": 1}, "radius": {"type": "integer", "minimum": 0, "maximum": 3}}, "additionalProperties": false}),
            move |args| {
                let terms: Vec<String> =
                    args["terms"].as_array().into_iter().flatten().filter_map(Value::as_str).map(String::from).collect();
                serde_json::to_value(query_linguistic_graph(graph, &terms, usize_arg(args, "radius", 1)))
                    .map_err(|e| ToolError::Failed(e.to_string()))
            },
        )
        .expect("fresh registry");
    let mut calls = 0usize;
    registry
        .register_tool(
            "collect_gloss_evidence",
            "Segment the sample and return the top-M gloss candidates per segment with component predictions. At most two calls.",
            json!({"type": "object", "properties": {"k_visual": {"type": "integer", "minimum": 1}, "k_phono": {"type": "integer", "minimum": 1}, "m": {"type": "integer", "minimum": 1}}, "additionalProperties": false}),
            move |args| {
                if calls >= MAX_EVIDENCE_CALLS {
                    return Err(ToolError::Failed(format!("collect_gloss_evidence may be called at most {MAX_EVIDENCE_CALLS} times")));
                }
                calls += 1;
                let mut ecfg = cfg.evidence;
                ecfg.k_visual = usize_arg(args, "k_visual", ecfg.k_visual);
                ecfg.k_phono = usize_arg(args, "k_phono", ecfg.k_phono);
                ecfg.m = usize_arg(args, "m", ecfg.m);
                let ctx = EvidenceContext { dictionary: res.dictionary, index: res.index, graph: res.graph, bank: res.bank };
                let ev = collect_gloss_evidence(sample, record.segments.as_deref(), ctx, &ecfg, res.ranker)
                    .map_err(|e| ToolError::Failed(e.to_string()))?;
                Ok(json!({"segments": ev}))
            },
        )
        .expect("fresh registry");
}

pub fn prompt(record: &SampleRecord) -> Value {
    json!({
        "task": "pseudogloss",
        "instructions": INSTRUCTIONS,
        "sample_id": record.sample_id,
        "sentence": record.sentence.clone().unwrap_or_default(),
    })
}

fn parse_answer(doc: Option<&Value>) -> Result<AssignmentDoc, String> {
    let doc = doc.ok_or("episode produced no final answer")?;
    let tokens = doc
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or("final answer lacks a `tokens` array")?
        .iter()
        .map(|t| t.as_str().map(String::from).ok_or("non-string token"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut warnings: Vec<String> = doc
        .get("warnings")
        .and_then(Value::as_array)
        .map(|w| w.iter().filter_map(Value::as_str).map(String::from).collect())
        .unwrap_or_default();
    let alignment = match doc.get("alignment") {
        None => Vec::new(),
        Some(a) => serde_json::from_value(a.clone()).unwrap_or_else(|e| {
            warnings.push(format!("alignment unreadable: {e}"));
            Vec::new()
        }),
    };
    Ok(AssignmentDoc { tokens, alignment, warnings })
}

/// Runs one Task 1 episode and validates its answer. Invalid answers are
/// recorded, never repaired.
pub fn run_pseudogloss_task(
    record: &SampleRecord,
    sample: &SampleFeatures,
    res: &PseudoGlossResources<'_>,
    backend: &mut dyn DecisionBackend,
    cfg: &PseudoGlossConfig,
) -> Result<(PseudoGlossRecord, EpisodeTrace), WorkflowError> {
    let sentence = record.sentence.clone().ok_or_else(|| WorkflowError::MissingSentence(record.sample_id.clone()))?;
    let input_tokens = sign_lemma(&sentence, res.lemmas);
    let mut registry = ToolRegistry::new();
    register_tools(&mut registry, record, sample, res, cfg);
    let outcome = run_episode(prompt(record), backend, &mut registry, cfg.episode);
    let episode = EpisodeSummary::of(&outcome.trace);
    let mut out = PseudoGlossRecord {
        format: RECORD_FORMAT.into(),
        version: RECORD_VERSION,
        sample_id: record.sample_id.clone(),
        subset: record.subset.clone(),
        sentence,
        input_tokens,
        tokens: Vec::new(),
        alignment: Vec::new(),
        validation_status: ValidationStatus::Rejected,
        validation: TokenVerdict::default(),
        failure_reason: None,
        warnings: Vec::new(),
        episode,
    };
    if !outcome.completed() {
        out.failure_reason = outcome.trace.rejection.as_ref().map(|r| format!("{:?}: {}", r.kind, r.message));
        return Ok((out, outcome.trace));
    }
    match parse_answer(outcome.final_document.as_ref()) {
        Err(reason) => {
            out.validation_status = ValidationStatus::Invalid;
            out.validation = validate_tokens(&out.input_tokens, &[]);
            out.failure_reason = Some(reason);
        }
        Ok(doc) => {
            out.validation = validate_tokens(&out.input_tokens, &doc.tokens);
            out.validation_status =
                if out.validation.valid { ValidationStatus::Valid } else { ValidationStatus::Invalid };
            if !out.validation.valid {
                out.failure_reason = Some(format!(
                    "token multiset mismatch: missing {:?}, extra {:?}",
                    out.validation.missing, out.validation.extra
                ));
            }
            let starts: Vec<usize> = doc
                .tokens
                .iter()
                .zip(&doc.alignment)
                .filter(|(t, a)| *t == &a.token)
                .filter_map(|(_, a)| a.segment.map(|s| s.start_frame))
                .collect();
            out.warnings = doc.warnings;
            if starts.windows(2).any(|w| w[0] > w[1]) {
                out.warnings.push("output order differs from the temporal order of assigned segments".into());
            }
            out.tokens = doc.tokens;
            out.alignment = doc.alignment;
        }
    }
    Ok((out, outcome.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoGlossParams {
    #[serde(flatten)]
    pub assign: AssignParams,
    pub k_first: usize,
    pub k_second: usize,
}

impl Default for PseudoGlossParams {
    fn default() -> Self {
        PseudoGlossParams { assign: AssignParams::default(), k_first: 5, k_second: 10 }
    }
}

/// Scripted Task 1 policy: lemmatise, look up the lexicon, gather evidence
/// (widening once if some token's glosses never appear), then assign.
/// Uses at most four tool calls.
pub struct PseudoGlossPolicy {
    pub params: PseudoGlossParams,
}

impl PseudoGlossPolicy {
    pub fn from_params(params: &Value) -> Self {
        PseudoGlossPolicy { params: params_or_default(params, "pseudogloss") }
    }
}

fn fail(reason: &str) -> Step {
    Step::final_answer(reason, json!({"tokens": [], "alignment": [], "warnings": [reason]}))
}

fn lexicon_from(v: Option<&Value>) -> BTreeMap<String, Vec<Phonology>> {
    let mut out = BTreeMap::new();
    if let Some(map) = v.and_then(|v| v.get("entries")).and_then(Value::as_object) {
        for (w, entries) in map {
            let phon: Vec<Phonology> = entries
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|e| serde_json::from_value(e["canonical_phonology"].clone()).ok())
                .collect();
            out.insert(w.clone(), phon);
        }
    }
    out
}

fn lexicon_glosses(v: Option<&Value>) -> BTreeMap<String, Vec<String>> {
    let mut out = BTreeMap::new();
    if let Some(map) = v.and_then(|v| v.get("entries")).and_then(Value::as_object) {
        for (w, entries) in map {
            let ids = entries.as_array().into_iter().flatten().filter_map(|e| e["gloss_id"].as_str()).map(String::from);
            out.insert(w.clone(), ids.collect());
        }
    }
    out
}

impl Policy for PseudoGlossPolicy {
    fn name(&self) -> &str {
        "pseudogloss"
    }

    fn decide(&self, state: &EpisodeState) -> Step {
        let sentence = state.prompt["sentence"].as_str().unwrap_or_default();
        let Some(lemma) = state.tool_results("sign_lemma").last() else {
            if state.tool_calls("sign_lemma") == 0 {
                return Step::tool("Normalise the sentence into tokens.", "sign_lemma", json!({"sentence": sentence}));
            }
            return fail("sign_lemma failed");
        };
        let tokens: Vec<String> = serde_json::from_value(lemma["tokens"].clone()).unwrap_or_default();
        if tokens.is_empty() {
            return Step::final_answer("No tokens to place.", json!({"tokens": [], "alignment": []}));
        }
        if state.tool_calls("lookup_lexicon") == 0 {
            let words: BTreeSet<&String> = tokens.iter().collect();
            return Step::tool("Fetch canonical phonology for each token.", "lookup_lexicon", json!({"words": words}));
        }
        let lex_value = state.tool_results("lookup_lexicon").last();
        let lexicon = lexicon_from(lex_value);

        let calls = state.tool_calls("collect_gloss_evidence");
        let results: Vec<&Value> = state.tool_results("collect_gloss_evidence").collect();
        if calls == 0 {
            return Step::tool(
                "Gather per-segment candidates.",
                "collect_gloss_evidence",
                json!({"k_visual": self.params.k_first}),
            );
        }
        if results.len() < calls {
            return fail("collect_gloss_evidence failed");
        }
        let evidence: Vec<SegmentEvidence> =
            match serde_json::from_value(results[results.len() - 1]["segments"].clone()) {
                Ok(e) => e,
                Err(_) => return fail("evidence unreadable"),
            };
        if calls < MAX_EVIDENCE_CALLS && self.params.k_second > self.params.k_first {
            let seen: BTreeSet<&str> =
                evidence.iter().flat_map(|e| e.candidates.iter().map(|c| c.gloss_id.as_str())).collect();
            let glosses = lexicon_glosses(lex_value);
            let unseen: Vec<&String> = glosses
                .iter()
                .filter(|(_, ids)| !ids.is_empty() && !ids.iter().any(|g| seen.contains(g.as_str())))
                .map(|(w, _)| w)
                .collect();
            if !unseen.is_empty() {
                let k = self.params.k_second;
                return Step::tool(
                    format!("No candidate for {unseen:?}; widen the search."),
                    "collect_gloss_evidence",
                    json!({"k_visual": k, "m": k}),
                );
            }
        }
        let doc = assign_tokens(&tokens, &evidence, &lexicon, &self.params.assign);
        let anchors =
            doc.alignment.iter().filter(|a| a.cues.is_some_and(|c| c.semantic == 1.0 && c.visual >= 0.9)).count();
        Step::final_answer(
            format!("{} tokens over {} segments; {anchors} visual anchors.", tokens.len(), evidence.len()),
            serde_json::to_value(doc).unwrap_or(Value::Null),
        )
    }
}
