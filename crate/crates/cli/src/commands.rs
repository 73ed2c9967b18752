use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use signagent::basetools::{DictionaryIndex, LemmaTable, MovementConfig, PrototypeBank, SegmenterConfig};
use signagent::datamodel::{
    load_dictionary, load_manifest, read_annotation_record, write_annotation_record, DatasetManifest, Dictionary,
    SampleRecord,
};
use signagent::enhanced::gbdt::spearman;
use signagent::enhanced::{train_ranker, EvidenceConfig, EvidenceContext, Gbdt, GbdtConfig};
use signagent::knowledge::{build_lexical_graph, query_linguistic_graph, KnowledgeGraph};
use signagent::metrics::{
    cluster_table, evaluate_clusters, evaluate_pseudogloss_corpus, sequence_table, GlossClustering, MetricError,
    SequenceRecord,
};
use signagent::orchestrator::{
    DecisionBackend, EpisodeConfig, EpisodeTrace, HttpBackend, HttpConfig, Policy, ScriptedBackend, Semaphore,
};
use signagent::pipeline::{ranker_training_rows, AlignedSample};
use signagent::synth::{generate, layout, load_references, write_fixture, SynthConfig};
use signagent::workflows::{
    run_idgloss_task, run_pseudogloss_task, AssignParams, CueWeights, IdGlossConfig, IdGlossParams, IdGlossPolicy,
    IdGlossRecord, IdGlossResources, IdGlossSample, PseudoGlossConfig, PseudoGlossParams, PseudoGlossPolicy,
    PseudoGlossRecord, PseudoGlossResources,
};

use crate::args::*;

/// Writes a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Exit 2 for configuration problems, 3 for bad or missing data.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn data<E: Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn config(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn check(ok: bool, msg: &str) -> Res<()> {
    if ok {
        Ok(())
    } else {
        Err(config(msg))
    }
}

fn pool(workers: usize) -> Res<rayon::ThreadPool> {
    check(workers >= 1, "--workers must be >= 1")?;
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| config(e.to_string()))
}

fn file_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Res<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(data)? + "\n";
    std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Resolves a path flag: explicit value, then the fixture layout. A path that
/// was named but does not exist is a configuration error naming the flag.
fn resolve(given: &Option<PathBuf>, fixture: &Option<PathBuf>, rel: &str, flag: &str) -> Res<Option<PathBuf>> {
    let p = given.clone().or_else(|| fixture.as_ref().map(|f| f.join(rel)));
    match p {
        Some(p) if !p.exists() => Err(config(format!("--{flag}: {} does not exist", p.display()))),
        other => Ok(other),
    }
}

fn required(given: &Option<PathBuf>, fixture: &Option<PathBuf>, rel: &str, flag: &str) -> Res<PathBuf> {
    resolve(given, fixture, rel, flag)?.ok_or_else(|| config(format!("--{flag} is required")))
}

struct Inputs {
    manifest: DatasetManifest,
    dictionary: Dictionary,
}

fn load_inputs(d: &DataArgs, manifest_rel: &str) -> Res<Inputs> {
    let mpath = required(&d.manifest, &d.fixture, manifest_rel, "manifest")?;
    let manifest = load_manifest(&mpath).map_err(data)?;
    let dictionary = load_dict(d, Some(&manifest))?;
    Ok(Inputs { manifest, dictionary })
}

fn load_dict(d: &DataArgs, manifest: Option<&DatasetManifest>) -> Res<Dictionary> {
    let path = match resolve(&d.dictionary, &d.fixture, layout::DICTIONARY, "dictionary")? {
        Some(p) => p,
        None => {
            let p = manifest
                .and_then(DatasetManifest::dictionary_path)
                .ok_or_else(|| config("--dictionary is required (the manifest names none)"))?;
            if !p.exists() {
                return Err(config(format!("--dictionary: {} (from the manifest) does not exist", p.display())));
            }
            p
        }
    };
    load_dictionary(&path).map_err(data)
}

fn load_banks(d: &DataArgs) -> Res<PrototypeBank> {
    PrototypeBank::load(&required(&d.banks, &d.fixture, layout::BANKS, "banks")?).map_err(data)
}

fn load_graph(d: &DataArgs, dict: &Dictionary) -> Res<KnowledgeGraph> {
    match &d.graph {
        Some(p) if !p.exists() => Err(config(format!("--graph: {} does not exist", p.display()))),
        Some(p) => KnowledgeGraph::load(p).map_err(data),
        None => build_lexical_graph(dict.entries()).map_err(data),
    }
}

fn evidence_config(e: &EvidenceArgs, bypass: bool) -> Res<EvidenceConfig> {
    check(e.k_visual >= 1 && e.m >= 1 && e.classifier_k >= 1, "--k-visual, --m and --classifier-k must be >= 1")?;
    check(e.seg_window >= 1 && e.seg_min_len >= 1, "--seg-window and --seg-min-len must be >= 1")?;
    check(
        e.seg_hi.is_finite() && e.seg_lo.is_finite() && e.seg_lo > 0.0 && e.seg_lo <= e.seg_hi,
        "segmenter factors must satisfy 0 < --seg-lo <= --seg-hi",
    )?;
    check(e.seg_min_speed.is_finite() && e.seg_min_speed >= 0.0, "--seg-min-speed must be >= 0")?;
    Ok(EvidenceConfig {
        k_visual: e.k_visual,
        k_phono: e.k_phono,
        m: e.m,
        classifier_k: e.classifier_k,
        min_component_hits: e.min_component_hits,
        bypass_ranker: bypass,
        movement: MovementConfig::default(),
        segmenter: SegmenterConfig {
            window: e.seg_window,
            hi_factor: e.seg_hi,
            lo_factor: e.seg_lo,
            min_len: e.seg_min_len,
            min_speed: e.seg_min_speed,
        },
    })
}

fn episode_config(b: &BackendArgs, default_cap: usize) -> Res<EpisodeConfig> {
    let cap = b.max_calls.unwrap_or(default_cap);
    check(cap >= 1, "--max-calls must be >= 1")?;
    Ok(EpisodeConfig { cap, retries: b.retries })
}

/// Builds one backend per episode; the HTTP limiter is shared by all of them.
struct BackendFactory {
    http: Option<(HttpConfig, Arc<Semaphore>)>,
}

impl BackendFactory {
    fn new(b: &BackendArgs, workers: usize) -> Res<Self> {
        if b.backend == BackendKind::Scripted {
            return Ok(BackendFactory { http: None });
        }
        let endpoint = b
            .endpoint
            .clone()
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| config("--endpoint (or SIGNAGENT_LLM_ENDPOINT) is required for the http backend"))?;
        check((0.0..=2.0).contains(&b.temperature), "--temperature must lie in [0, 2]")?;
        let mut cfg = HttpConfig::new(endpoint, b.model.clone());
        cfg.api_key = b.api_key.clone().filter(|k| !k.is_empty());
        cfg.max_retries = b.http_retries;
        cfg.timeout_secs = b.timeout_secs;
        cfg.temperature = b.temperature;
        Ok(BackendFactory { http: Some((cfg, Arc::new(Semaphore::new(workers)))) })
    }

    fn make(&self, policy: impl FnOnce() -> Box<dyn Policy>) -> Result<Box<dyn DecisionBackend>, String> {
        match &self.http {
            None => Ok(Box::new(ScriptedBackend::new(policy()))),
            Some((cfg, limiter)) => {
                Ok(Box::new(HttpBackend::new(cfg.clone(), limiter.clone()).map_err(|e| e.to_string())?))
            }
        }
    }
}

fn status_name(s: impl serde::Serialize) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn tally(statuses: impl Iterator<Item = String>, failed: usize) -> BTreeMap<String, usize> {
    let mut t: BTreeMap<String, usize> = BTreeMap::new();
    for s in statuses {
        *t.entry(s).or_default() += 1;
    }
    if failed > 0 {
        t.insert("failed".into(), failed);
    }
    t
}

fn tally_line(t: &BTreeMap<String, usize>) -> String {
    t.iter().map(|(k, v)| format!("{v} {k}")).collect::<Vec<_>>().join(", ")
}

pub fn ingest(a: &IngestArgs, workers: usize) -> Res<()> {
    let mpath = required(&a.data.manifest, &a.data.fixture, layout::TASK1_MANIFEST, "manifest")?;
    let manifest = load_manifest(&mpath).map_err(data)?;
    let pool = pool(workers)?;
    let decoded: Vec<Result<(usize, usize), String>> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| {
                let f = manifest.load_features(s).map_err(|e| format!("{}: {e}", s.sample_id))?;
                let eval = manifest.load_eval_embedding(s).map_err(|e| format!("{}: {e}", s.sample_id))?;
                let _ = eval;
                Ok((f.frames.len(), f.embeddings.first().map_or(0, |e| e.dim())))
            })
            .collect()
    });
    let mut frames = 0;
    let mut dims = BTreeSet::new();
    for r in decoded {
        let (n, d) = r.map_err(Failure::Data)?;
        frames += n;
        dims.insert(d);
    }
    let dictionary = match (&a.data.dictionary, &a.data.fixture, manifest.dictionary_ref.is_some()) {
        (None, None, false) => None,
        _ => Some(load_dict(&a.data, Some(&manifest))?),
    };
    if let Some(dict) = &dictionary {
        if let (Some(ed), Some(dd)) = (dims.iter().next(), dict.dim()) {
            if dims.len() == 1 && *ed != dd {
                return Err(data(format!("embeddings have dimension {ed} but the dictionary has {dd}")));
            }
        }
    }
    if let Some(out) = &a.write_graph {
        let dict = dictionary.as_ref().ok_or_else(|| config("--write-graph needs a dictionary"))?;
        build_lexical_graph(dict.entries()).map_err(data)?.save(out).map_err(data)?;
    }
    let count = |f: fn(&SampleRecord) -> bool| manifest.samples.iter().filter(|s| f(s)).count();
    let summary = json!({
        "manifest": mpath,
        "samples": manifest.samples.len(),
        "frames": frames,
        "embedding_dims": dims,
        "with_sentence": count(|s| s.sentence.is_some()),
        "with_gloss_label": count(|s| s.gloss_label.is_some()),
        "with_segments": count(|s| s.segments.is_some()),
        "with_eval_embedding": count(|s| s.feature_refs.eval_embedding.is_some()),
        "dictionary_entries": dictionary.as_ref().map(Dictionary::len),
    });
    say!("{}", serde_json::to_string_pretty(&summary).map_err(data)?);
    say!("ingest: {} samples, {frames} frames, all feature files decoded", manifest.samples.len());
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Res<()> {
    check(a.sigma.is_finite() && a.sigma >= 0.0, "--sigma must be finite and >= 0")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed,
        sigma: a.sigma,
        glosses: a.glosses.unwrap_or(d.glosses),
        sentences: a.sentences.unwrap_or(d.sentences),
        idgloss_glosses: a.idgloss_glosses.unwrap_or(d.idgloss_glosses),
        variant_members: a.variant_members.unwrap_or(d.variant_members),
        ..d
    };
    check(cfg.glosses >= cfg.max_tokens, "--glosses must be at least the longest sentence")?;
    check(cfg.idgloss_glosses <= cfg.glosses, "--idgloss-glosses cannot exceed --glosses")?;
    check(cfg.variant_members >= 1, "--variant-members must be >= 1")?;
    let fx = generate(&cfg).map_err(|e| config(e.to_string()))?;
    write_fixture(&a.out, &fx).map_err(data)?;
    say!(
        "synth-fixtures: {} glosses, {} sentences, {} id-gloss glosses, sigma {} -> {}",
        fx.dictionary.len(),
        fx.sentences.len(),
        fx.id_glosses.len(),
        a.sigma,
        a.out.display()
    );
    Ok(())
}

pub fn pseudogloss(a: &PseudoGlossArgs, seed: u64, workers: usize) -> Res<()> {
    let weights = CueWeights {
        visual: a.w_visual,
        phono: a.w_phono,
        activity: a.w_activity,
        temporal: a.w_temporal,
        semantic: a.w_semantic,
    };
    weights.validate().map_err(config)?;
    check(a.k_first >= 1 && a.k_second >= 1, "--k-first and --k-second must be >= 1")?;
    let defaults = PseudoGlossConfig::default();
    let cfg = PseudoGlossConfig {
        evidence: evidence_config(&a.evidence, a.no_ranker)?,
        episode: episode_config(&a.backend, defaults.episode.cap)?,
    };
    let params = PseudoGlossParams {
        assign: AssignParams { weights, allow_shared_segments: a.allow_shared_segments, ..AssignParams::default() },
        k_first: a.k_first,
        k_second: a.k_second,
    };
    let backends = BackendFactory::new(&a.backend, workers)?;
    let pool = pool(workers)?;
    if a.ranker.is_none() && !a.no_ranker {
        return Err(config("--ranker is required (or pass --no-ranker)"));
    }
    let ranker = match &a.ranker {
        Some(p) if !p.exists() => return Err(config(format!("--ranker: {} does not exist", p.display()))),
        Some(p) => Some(Gbdt::load(p).map_err(data)?),
        None => None,
    };

    let inputs = load_inputs(&a.data, layout::TASK1_MANIFEST)?;
    let bank = load_banks(&a.data)?;
    let lemmas = LemmaTable::load(
        resolve(&a.data.stopwords, &a.data.fixture, layout::STOPWORDS, "stopwords")?.as_deref(),
        resolve(&a.data.lemmas, &a.data.fixture, layout::LEMMAS, "lemmas")?.as_deref(),
    )
    .map_err(data)?;
    let graph = load_graph(&a.data, &inputs.dictionary)?;
    let index = DictionaryIndex::new(&inputs.dictionary).map_err(data)?;
    let res = PseudoGlossResources {
        dictionary: &inputs.dictionary,
        index: &index,
        graph: &graph,
        bank: &bank,
        lemmas: &lemmas,
        ranker: ranker.as_ref(),
    };
    let manifest = &inputs.manifest;
    if manifest.samples.is_empty() {
        return Err(data("the manifest holds no samples"));
    }

    let outcomes: Vec<Result<(PseudoGlossRecord, EpisodeTrace), String>> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| {
                let features = manifest.load_features(s).map_err(|e| e.to_string())?;
                let mut backend = backends.make(|| Box::new(PseudoGlossPolicy { params: params.clone() }))?;
                run_pseudogloss_task(s, &features, &res, backend.as_mut(), &cfg).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut statuses = Vec::new();
    for (s, out) in manifest.samples.iter().zip(outcomes) {
        match out {
            Ok((record, trace)) => {
                let name = file_name(&s.sample_id);
                write_annotation_record(&record, &a.out.join("records").join(format!("{name}.json"))).map_err(data)?;
                write_json(&a.out.join("traces").join(format!("{name}.trace.json")), &trace)?;
                statuses.push(status_name(record.validation_status));
            }
            Err(e) => {
                log::error!("{}: {e}", s.sample_id);
                failures.push(json!({"sample_id": s.sample_id, "error": e}));
            }
        }
    }
    let t = tally(statuses.into_iter(), failures.len());
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "command": "pseudogloss",
            "seed": seed,
            "backend": format!("{:?}", a.backend.backend).to_lowercase(),
            "samples": manifest.samples.len(),
            "status": t,
            "failures": failures,
        }),
    )?;
    say!("pseudogloss: {} samples: {}", manifest.samples.len(), tally_line(&t));
    Ok(())
}

pub fn idgloss(a: &IdGlossArgs, seed: u64, workers: usize) -> Res<()> {
    check(a.tau > 0.0 && a.tau <= 2.0, "--tau must lie in (0, 2]")?;
    check((0.0..=1.0).contains(&a.tau_overlap), "--tau-overlap must lie in [0, 1]")?;
    check(a.distance_factor.is_finite() && a.distance_factor > 0.0, "--distance-factor must be > 0")?;
    check(
        (1..=5).contains(&a.min_agree_singleton) && (1..=5).contains(&a.min_agree_multi),
        "--min-agree-singleton and --min-agree-multi must lie in 1..=5",
    )?;
    check(a.top_k >= 1 && a.classifier_k >= 1, "--top-k and --classifier-k must be >= 1")?;
    let params = IdGlossParams {
        tau: a.tau,
        distance_factor: a.distance_factor,
        tau_overlap: a.tau_overlap,
        min_agree_singleton: a.min_agree_singleton,
        min_agree_multi: a.min_agree_multi,
    };
    let defaults = IdGlossConfig::default();
    let cfg = IdGlossConfig {
        episode: episode_config(&a.backend, defaults.episode.cap)?,
        classifier_k: a.classifier_k,
        top_k: a.top_k,
        tau: a.tau,
        ..defaults
    };
    let backends = BackendFactory::new(&a.backend, workers)?;
    let pool = pool(workers)?;
    let inputs = load_inputs(&a.data, layout::TASK2_MANIFEST)?;
    let bank = load_banks(&a.data)?;
    let res = IdGlossResources { dictionary: &inputs.dictionary, bank: &bank };
    let manifest = &inputs.manifest;

    let mut groups: BTreeMap<String, Vec<&SampleRecord>> = BTreeMap::new();
    for s in &manifest.samples {
        match &s.gloss_label {
            Some(g) => groups.entry(g.clone()).or_default().push(s),
            None => log::warn!("{}: no gloss_label; skipped", s.sample_id),
        }
    }
    if groups.is_empty() {
        return Err(data("no sample carries a gloss_label"));
    }
    let groups: Vec<(String, Vec<&SampleRecord>)> = groups.into_iter().collect();

    let outcomes: Vec<Result<(IdGlossRecord, Option<EpisodeTrace>), String>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(gloss, members)| {
                let samples = members
                    .iter()
                    .map(|s| {
                        let f = manifest.load_features(s).map_err(|e| e.to_string())?;
                        IdGlossSample::from_features(s.sample_id.clone(), f).map_err(|e| e.to_string())
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                let mut backend = backends.make(|| Box::new(IdGlossPolicy { params }))?;
                run_idgloss_task(gloss, &samples, &res, backend.as_mut(), &cfg).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut statuses = Vec::new();
    let (mut base_ids, mut refined_ids, mut counted) = (0usize, 0usize, 0usize);
    for ((gloss, _), out) in groups.iter().zip(outcomes) {
        match out {
            Ok((record, trace)) => {
                for w in &record.warnings {
                    log::warn!("{gloss}: {w}");
                }
                let name = file_name(gloss);
                write_annotation_record(&record, &a.out.join("records").join(format!("{name}.json"))).map_err(data)?;
                if let Some(t) = trace {
                    write_json(&a.out.join("traces").join(format!("{name}.trace.json")), &t)?;
                }
                if record.validation.valid {
                    base_ids += record.baseline.clusters.len();
                    refined_ids += record.clusters.len();
                    counted += 1;
                }
                statuses.push(status_name(record.validation_status));
            }
            Err(e) => {
                log::error!("{gloss}: {e}");
                failures.push(json!({"gloss": gloss, "error": e}));
            }
        }
    }
    let t = tally(statuses.into_iter(), failures.len());
    let mean = |n: usize| if counted == 0 { None } else { Some(n as f64 / counted as f64) };
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "command": "idgloss",
            "seed": seed,
            "backend": format!("{:?}", a.backend.backend).to_lowercase(),
            "glosses": groups.len(),
            "status": t,
            "baseline_ids_per_gloss": mean(base_ids),
            "refined_ids_per_gloss": mean(refined_ids),
            "failures": failures,
        }),
    )?;
    let fmt = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.2}"));
    say!(
        "idgloss: {} glosses: {}; IDs/gloss {} -> {}",
        groups.len(),
        tally_line(&t),
        fmt(mean(base_ids)),
        fmt(mean(refined_ids))
    );
    Ok(())
}

fn record_files(dir: &Path) -> Res<Vec<PathBuf>> {
    if !dir.exists() {
        return Err(config(format!("--records: {} does not exist", dir.display())));
    }
    let dir = if dir.join("records").is_dir() { dir.join("records") } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(data(format!("no records in {}", dir.display())));
    }
    Ok(files)
}

fn metric(e: MetricError) -> Failure {
    data(e)
}

pub fn eval(c: &EvalCommand) -> Res<()> {
    match c {
        EvalCommand::Pseudogloss { records, references, json } => {
            let files = record_files(records)?;
            if !references.exists() {
                return Err(config(format!("--references: {} does not exist", references.display())));
            }
            let refs = load_references(references).map_err(data)?;
            let subsets: BTreeMap<String, Option<String>> =
                refs.iter().map(|r| (r.sample_id.clone(), r.subset.clone())).collect();
            let mut reference = BTreeMap::new();
            for r in refs {
                if reference.insert(r.sample_id.clone(), r.reference).is_some() {
                    return Err(data(format!("duplicate reference for `{}`", r.sample_id)));
                }
            }
            let mut rows = Vec::new();
            for f in files {
                let r: PseudoGlossRecord = read_annotation_record(&f).map_err(data)?;
                let subset = r
                    .subset
                    .clone()
                    .or_else(|| subsets.get(&r.sample_id).cloned().flatten())
                    .unwrap_or_else(|| "all".into());
                rows.push(SequenceRecord {
                    sample_id: r.sample_id,
                    subset,
                    hypothesis: r.tokens,
                    valid: r.validation_status.is_valid(),
                });
            }
            let report = evaluate_pseudogloss_corpus(&rows, &reference).map_err(metric)?;
            say!("{}", sequence_table(&report).trim_end());
            if let Some(p) = json {
                write_json(p, &report)?;
            }
            Ok(())
        }
        EvalCommand::Idgloss { records, manifest, json } => {
            let files = record_files(records)?;
            if !manifest.exists() {
                return Err(config(format!("--manifest: {} does not exist", manifest.display())));
            }
            let m = load_manifest(manifest).map_err(data)?;
            let (mut base, mut refined) = (Vec::new(), Vec::new());
            let mut skipped = 0;
            for f in files {
                let r: IdGlossRecord = read_annotation_record(&f).map_err(data)?;
                if !r.validation.valid {
                    skipped += 1;
                    continue;
                }
                let mut embeddings = Vec::new();
                for key in &r.sample_keys {
                    let s = m
                        .sample(key)
                        .ok_or_else(|| metric(MetricError::KeyMismatch(format!("`{key}` is not in the manifest"))))?;
                    let e = m
                        .load_eval_embedding(s)
                        .map_err(data)?
                        .ok_or_else(|| data(format!("`{key}` has no eval embedding")))?;
                    embeddings.push(e.to_f64());
                }
                let assign = |clusters: Vec<&Vec<String>>| -> Vec<usize> {
                    r.sample_keys.iter().map(|k| clusters.iter().position(|c| c.contains(k)).unwrap_or(0)).collect()
                };
                let b = assign(r.baseline.clusters.iter().map(|c| &c.members).collect());
                let f = assign(r.clusters.iter().map(|c| &c.members).collect());
                base.push(GlossClustering { gloss: r.gloss.clone(), embeddings: embeddings.clone(), assignment: b });
                refined.push(GlossClustering { gloss: r.gloss, embeddings, assignment: f });
            }
            if base.is_empty() {
                return Err(data("no valid ID-gloss records to evaluate"));
            }
            let b = evaluate_clusters(&base).map_err(metric)?;
            let f = evaluate_clusters(&refined).map_err(metric)?;
            say!(
                "{}",
                cluster_table(&[("Visual baseline".into(), b.clone()), ("Refined".into(), f.clone())]).trim_end()
            );
            if skipped > 0 {
                say!("{skipped} invalid records skipped");
            }
            if let Some(p) = json {
                write_json(p, &json!({"baseline": b, "refined": f, "skipped": skipped}))?;
            }
            Ok(())
        }
    }
}

pub fn train(a: &TrainRankerArgs, seed: u64, workers: usize) -> Res<()> {
    check(
        a.n_trees >= 1 && a.max_depth >= 1 && a.min_samples_leaf >= 1,
        "--n-trees, --max-depth and --min-samples-leaf must be >= 1",
    )?;
    check(a.learning_rate > 0.0 && a.learning_rate <= 1.0, "--learning-rate must lie in (0, 1]")?;
    check(a.subsample > 0.0 && a.subsample <= 1.0, "--subsample must lie in (0, 1]")?;
    let ecfg = evidence_config(&a.evidence, true)?;
    let gcfg = GbdtConfig {
        n_trees: a.n_trees,
        max_depth: a.max_depth,
        learning_rate: a.learning_rate,
        min_samples_leaf: a.min_samples_leaf,
        subsample: a.subsample,
        seed,
    };
    let refs_path = required(&a.references, &a.data.fixture, layout::TASK1_REFERENCES, "references")?;
    let pool = pool(workers)?;
    let inputs = load_inputs(&a.data, layout::TASK1_MANIFEST)?;
    let bank = load_banks(&a.data)?;
    let graph = load_graph(&a.data, &inputs.dictionary)?;
    let index = DictionaryIndex::new(&inputs.dictionary).map_err(data)?;
    let ctx = EvidenceContext { dictionary: &inputs.dictionary, index: &index, graph: &graph, bank: &bank };
    let refs = load_references(&refs_path).map_err(data)?;
    let usable: Vec<_> =
        refs.iter().filter(|r| !r.gloss_ids.is_empty() && r.gloss_ids.len() == r.segments.len()).collect();
    if usable.is_empty() {
        return Err(data("no reference line carries aligned gloss_ids and segments"));
    }
    let m = &inputs.manifest;
    let features = pool.install(|| {
        usable
            .par_iter()
            .map(|r| {
                let s =
                    m.sample(&r.sample_id).ok_or_else(|| data(format!("`{}` is not in the manifest", r.sample_id)))?;
                m.load_features(s).map_err(data)
            })
            .collect::<Res<Vec<_>>>()
    })?;
    let aligned: Vec<AlignedSample> = usable
        .iter()
        .zip(&features)
        .map(|(r, f)| AlignedSample { features: f, spans: &r.segments, gloss_ids: &r.gloss_ids })
        .collect();
    let rows = ranker_training_rows(&aligned, ctx, &ecfg).map_err(data)?;
    let model = train_ranker(&rows, &gcfg).map_err(data)?;
    let pred: Vec<f64> = rows.iter().map(|r| model.predict(&r.0)).collect::<Result<_, _>>().map_err(data)?;
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    model.save(&a.out).map_err(data)?;
    say!(
        "train-ranker: {} rows from {} samples, {} trees, training Spearman {:.4} -> {}",
        rows.len(),
        aligned.len(),
        gcfg.n_trees,
        spearman(&pred, &y),
        a.out.display()
    );
    Ok(())
}

pub fn graph_query(a: &GraphQueryArgs) -> Res<()> {
    let graph = match &a.data.graph {
        Some(_) => load_graph(&a.data, &Dictionary::new(Vec::new()).map_err(data)?)?,
        None => {
            let dict = load_dict(&a.data, None)?;
            build_lexical_graph(dict.entries()).map_err(data)?
        }
    };
    let result = query_linguistic_graph(&graph, &a.terms, a.radius);
    let out: Value = serde_json::to_value(&result).map_err(data)?;
    say!("{}", serde_json::to_string_pretty(&out).map_err(data)?);
    Ok(())
}
