#![allow(dead_code)]

use std::collections::BTreeMap;

use serde_json::Value;
use signagent::basetools::DictionaryIndex;
use signagent::enhanced::{EvidenceConfig, EvidenceContext, Gbdt, GbdtConfig};
use signagent::knowledge::build_lexical_graph;
use signagent::metrics::{
    evaluate_clusters, evaluate_pseudogloss_corpus, ClusterEvalResult, CorpusReport, GlossClustering, SequenceRecord,
};
use signagent::orchestrator::{EpisodeTrace, ScriptedBackend};
use signagent::pipeline::{train_from_alignments, AlignedSample};
use signagent::synth::{generate, SynthConfig, SynthFixture};
use signagent::workflows::{
    run_idgloss_task, run_pseudogloss_task, IdGlossConfig, IdGlossPolicy, IdGlossRecord, IdGlossResources,
    IdGlossSample, PseudoGlossConfig, PseudoGlossPolicy, PseudoGlossRecord, PseudoGlossResources,
};

pub fn train_ranker_for(sigma: f64, seed: u64) -> Gbdt {
    let fx = generate(&SynthConfig { seed, sigma, ..SynthConfig::default() }).unwrap();
    let index = DictionaryIndex::new(&fx.dictionary).unwrap();
    let graph = build_lexical_graph(fx.dictionary.entries()).unwrap();
    let ctx = EvidenceContext { dictionary: &fx.dictionary, index: &index, graph: &graph, bank: &fx.bank };
    let aligned: Vec<AlignedSample> = fx
        .sentences
        .iter()
        .map(|s| AlignedSample { features: &s.features, spans: &s.spans, gloss_ids: &s.gloss_ids })
        .collect();
    train_from_alignments(&aligned, ctx, &EvidenceConfig::default(), &GbdtConfig::default()).unwrap()
}

pub struct Task1Run {
    pub fixture: SynthFixture,
    pub records: Vec<PseudoGlossRecord>,
    pub traces: Vec<EpisodeTrace>,
    pub report: CorpusReport,
}

pub fn run_task1(sigma: f64, seed: u64) -> Task1Run {
    let fixture = generate(&SynthConfig { seed, sigma, ..SynthConfig::default() }).unwrap();
    let ranker = train_ranker_for(sigma, seed + 1000);
    let index = DictionaryIndex::new(&fixture.dictionary).unwrap();
    let graph = build_lexical_graph(fixture.dictionary.entries()).unwrap();
    let res = PseudoGlossResources {
        dictionary: &fixture.dictionary,
        index: &index,
        graph: &graph,
        bank: &fixture.bank,
        lemmas: &fixture.lemmas,
        ranker: Some(&ranker),
    };
    let cfg = PseudoGlossConfig::default();
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for s in &fixture.sentences {
        let mut backend = ScriptedBackend::new(Box::new(PseudoGlossPolicy::from_params(&Value::Null)));
        let (r, t) = run_pseudogloss_task(&s.record, &s.features, &res, &mut backend, &cfg).unwrap();
        records.push(r);
        traces.push(t);
    }
    let seq: Vec<SequenceRecord> = records
        .iter()
        .map(|r| SequenceRecord {
            sample_id: r.sample_id.clone(),
            subset: r.subset.clone().unwrap_or_default(),
            hypothesis: r.tokens.clone(),
            valid: r.validation_status.is_valid(),
        })
        .collect();
    let report = evaluate_pseudogloss_corpus(&seq, &fixture.references()).unwrap();
    Task1Run { fixture, records, traces, report }
}

pub struct Task2Run {
    pub fixture: SynthFixture,
    pub records: Vec<IdGlossRecord>,
    pub baseline_eval: ClusterEvalResult,
    pub refined_eval: ClusterEvalResult,
}

pub fn run_task2(seed: u64) -> Task2Run {
    let fixture = generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let res = IdGlossResources { dictionary: &fixture.dictionary, bank: &fixture.bank };
    let cfg = IdGlossConfig::default();
    let mut records = Vec::new();
    let (mut base, mut refined) = (Vec::new(), Vec::new());
    for g in &fixture.id_glosses {
        let samples: Vec<IdGlossSample> = g
            .samples
            .iter()
            .map(|s| IdGlossSample::from_features(s.record.sample_id.clone(), s.features.clone()).unwrap())
            .collect();
        let mut backend = ScriptedBackend::new(Box::new(IdGlossPolicy::from_params(&Value::Null)));
        let (r, _) = run_idgloss_task(&g.gloss_id, &samples, &res, &mut backend, &cfg).unwrap();
        let eval: BTreeMap<&str, _> =
            g.samples.iter().map(|s| (s.record.sample_id.as_str(), s.eval_embedding.to_f64())).collect();
        let keys: Vec<&str> = eval.keys().copied().collect();
        let embeddings: Vec<Vec<f64>> = keys.iter().map(|k| eval[k].clone()).collect();
        let assign = |clusters: Vec<Vec<String>>| -> Vec<usize> {
            keys.iter().map(|k| clusters.iter().position(|c| c.iter().any(|m| m == k)).unwrap()).collect()
        };
        let b: Vec<Vec<String>> = r.baseline.clusters.iter().map(|c| c.members.clone()).collect();
        let f: Vec<Vec<String>> = r.clusters.iter().map(|c| c.members.clone()).collect();
        base.push(GlossClustering { gloss: g.gloss_id.clone(), embeddings: embeddings.clone(), assignment: assign(b) });
        refined.push(GlossClustering { gloss: g.gloss_id.clone(), embeddings, assignment: assign(f) });
        records.push(r);
    }
    Task2Run {
        fixture,
        records,
        baseline_eval: evaluate_clusters(&base).unwrap(),
        refined_eval: evaluate_clusters(&refined).unwrap(),
    }
}
