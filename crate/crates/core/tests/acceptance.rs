//! Acceptance suite. Each criterion prints one PASS/FAIL line.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use signagent::basetools::{PhonoPrediction, RankedLabel};
use signagent::datamodel::{ComponentKind, Embedding, Phonology};
use signagent::enhanced::gbdt::spearman;
use signagent::enhanced::{
    score_phonological_agreement, train_ranker, visual_id_gloss, Gbdt, GbdtConfig, PredictionSet,
};
use signagent::metrics::{
    calinski_harabasz, cluster_entropy_bits, kendall_tau_positions, lcs_percent, silhouette_mean, MetricError,
};
use signagent::orchestrator::{
    run_episode, BackendError, BackendReply, DecisionBackend, EpisodeConfig, EpisodeState, EpisodeStatus, HttpBackend,
    HttpConfig, RejectionKind, ReplayBackend, Semaphore, Step, ToolError, ToolRegistry, ToolSpec,
};
use signagent::workflows::{correction_pass, validate_partition, validate_tokens, CorrectionEvidence, RefinedCluster};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!("[{}] criterion {n}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn toks(s: &[u8]) -> Vec<String> {
    s.iter().map(|c| (*c as char).to_string()).collect()
}

fn all_sequences(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|c| it.any(|h| h == c))
}

/// Longest subsequence of `hyp` (by enumerating all of them) that is also a
/// subsequence of `reference`.
fn lcs_oracle(reference: &[u8], hyp: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << hyp.len()) {
        let n = mask.count_ones() as usize;
        if n <= best {
            continue;
        }
        let sub: Vec<u8> = (0..hyp.len()).filter(|i| mask >> i & 1 == 1).map(|i| hyp[i]).collect();
        if is_subsequence(&sub, reference) {
            best = n;
        }
    }
    best
}

fn kendall_oracle(reference: &[String], hyp: &[String]) -> Option<f64> {
    let first = |s: &[String], t: &str| s.iter().position(|x| x == t);
    let mut types: Vec<&String> = Vec::new();
    for t in reference {
        if !types.contains(&t) && first(hyp, t).is_some() {
            types.push(t);
        }
    }
    if types.len() < 2 {
        return None;
    }
    let (mut c, mut d) = (0i64, 0i64);
    for i in 0..types.len() {
        for j in 0..types.len() {
            if i < j {
                let r = first(reference, types[i]).unwrap() as i64 - first(reference, types[j]).unwrap() as i64;
                let h = first(hyp, types[i]).unwrap() as i64 - first(hyp, types[j]).unwrap() as i64;
                if r * h > 0 {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    Some((c - d) as f64 / (c + d) as f64)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn cos_d(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

#[test]
fn criterion_1_metric_oracles() {
    let t0 = Instant::now();
    let mut failures = Vec::new();

    // LCS: every pair over a 3-letter alphabet with combined length <= 8,
    // plus every length-8 reference against a fixed set of length-8 hypotheses
    let seqs = all_sequences(b"abc", 8);
    let mut lcs_pairs = 0usize;
    for r in seqs.iter().filter(|s| !s.is_empty()) {
        for h in seqs.iter().filter(|h| r.len() + h.len() <= 8) {
            lcs_pairs += 1;
            let want = 100.0 * lcs_oracle(r, h) as f64 / r.len() as f64;
            if lcs_percent(&toks(r), &toks(h)).unwrap() != want {
                failures.push(format!("lcs {r:?} {h:?}"));
            }
        }
    }
    let long: Vec<&Vec<u8>> = seqs.iter().filter(|s| s.len() == 8).collect();
    for r in long.iter().step_by(7) {
        for h in long.iter().step_by(97) {
            lcs_pairs += 1;
            let want = 100.0 * lcs_oracle(r, h) as f64 / 8.0;
            if lcs_percent(&toks(r), &toks(h)).unwrap() != want {
                failures.push(format!("lcs {r:?} {h:?}"));
            }
        }
    }
    if lcs_percent(&toks(b"abcd"), &toks(b"acbd")).unwrap() != 75.0 {
        failures.push("lcs worked example".into());
    }
    if !matches!(lcs_percent(&[], &toks(b"a")), Err(MetricError::EmptyReference)) {
        failures.push("lcs empty reference".into());
    }

    // Kendall: all permutation pairs up to n = 5, all hypotheses for n = 6
    let letters: Vec<String> = "abcdef".chars().map(String::from).collect();
    let mut tau_pairs = 0usize;
    for n in 0..=6 {
        let perms = permutations(n);
        let refs: Vec<&Vec<usize>> = if n <= 5 { perms.iter().collect() } else { vec![&perms[0]] };
        for r in refs {
            let rs: Vec<String> = r.iter().map(|&i| letters[i].clone()).collect();
            for h in &perms {
                tau_pairs += 1;
                let hs: Vec<String> = h.iter().map(|&i| letters[i].clone()).collect();
                if kendall_tau_positions(&rs, &hs) != kendall_oracle(&rs, &hs) {
                    failures.push(format!("tau {rs:?} {hs:?}"));
                }
            }
        }
    }
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let t = kendall_tau_positions(&s(&["a", "b", "c"]), &s(&["a", "c", "b"])).unwrap();
    if (t - 1.0 / 3.0).abs() > 1e-12 {
        failures.push("tau worked example".into());
    }

    // entropy
    let h31 = cluster_entropy_bits(&[3, 1]).unwrap();
    let closed = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
    if (h31 - 0.8113).abs() > 1e-4 || (h31 - closed).abs() > 1e-9 {
        failures.push(format!("entropy (3,1) = {h31}"));
    }
    if cluster_entropy_bits(&[4, 4]).unwrap() != 1.0 || cluster_entropy_bits(&[5]).unwrap() != 0.0 {
        failures.push("entropy uniform/single".into());
    }
    if !matches!(cluster_entropy_bits(&[]), Err(MetricError::EmptyInput)) {
        failures.push("entropy empty".into());
    }

    // silhouette: two tight bundles, intra distance 0.01
    let at = |base: f64, d: f64| {
        let a = base + (1.0 - d).acos();
        vec![a.cos(), a.sin()]
    };
    let x =
        vec![at(0.0, 0.0), at(0.0, 0.01), at(std::f64::consts::FRAC_PI_2, 0.0), at(std::f64::consts::FRAC_PI_2, 0.01)];
    let asg = [0, 0, 1, 1];
    let mut hand = 0.0;
    for i in 0..4 {
        let same: Vec<usize> = (0..4).filter(|&j| j != i && asg[j] == asg[i]).collect();
        let other: Vec<usize> = (0..4).filter(|&j| asg[j] != asg[i]).collect();
        let a = same.iter().map(|&j| cos_d(&x[i], &x[j])).sum::<f64>() / same.len() as f64;
        let b = other.iter().map(|&j| cos_d(&x[i], &x[j])).sum::<f64>() / other.len() as f64;
        hand += (b - a) / a.max(b) / 4.0;
    }
    let sil = silhouette_mean(&x, &asg).unwrap();
    if (sil - hand).abs() > 1e-9 || sil < 0.9 {
        failures.push(format!("silhouette {sil} vs {hand}"));
    }
    let same = vec![vec![1.0, 0.0]; 4];
    if silhouette_mean(&same, &asg).unwrap() != 0.0 {
        failures.push("silhouette 0/0".into());
    }
    if !matches!(silhouette_mean(&x, &[0, 0, 0, 0]), Err(MetricError::SingleCluster)) {
        failures.push("silhouette single cluster".into());
    }

    // Calinski-Harabasz: B = 100, W = 0.01, K = 2, n = 4
    let line = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
    let ch = calinski_harabasz(&line, &asg).unwrap();
    let closed = (100.0 / 1.0) / (0.01 / 2.0);
    if ((ch - closed) / closed).abs() > 1e-9 {
        failures.push(format!("CH {ch} vs {closed}"));
    }
    let collapsed = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
    if calinski_harabasz(&collapsed, &asg).unwrap() != f64::INFINITY {
        failures.push("CH W = 0".into());
    }
    let mut mean_ch = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let pts: Vec<Vec<f64>> = (0..60).map(|_| (0..2).map(|_| rng.sample::<f64, _>(normal)).collect()).collect();
        let a: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        mean_ch += calinski_harabasz(&pts, &a).unwrap() / 100.0;
    }
    if !(0.5..=1.5).contains(&mean_ch) {
        failures.push(format!("CH noise mean {mean_ch}"));
    }

    let secs = t0.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 30.0;
    report(
        1,
        "metric oracles",
        ok,
        &format!(
            "{lcs_pairs} LCS pairs, {tau_pairs} tau pairs, {} failures, {secs:.1}s: {:?}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

fn eq2_oracle(canonical: &Phonology, preds: &PredictionSet) -> f64 {
    let mut total = 0.0;
    for (kind, label) in canonical {
        let mut s = 0.0;
        if let Some(p) = preds.get(kind) {
            for (r, item) in p.ranked.iter().enumerate() {
                if &item.label == label {
                    s += item.confidence / (r + 1) as f64;
                }
            }
        }
        total += s;
    }
    total / canonical.len() as f64
}

#[test]
fn criterion_2_phonological_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels = ["p", "q", "r", "s"];
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut canonical = Phonology::new();
        let mut preds = PredictionSet::new();
        for &kind in ComponentKind::ALL.iter() {
            if rng.random_bool(0.7) {
                canonical.insert(kind, labels[rng.random_range(0..4)].to_string());
            }
            if rng.random_bool(0.8) {
                let mut ls = labels.to_vec();
                ls.shuffle(&mut rng);
                let k = rng.random_range(1..=4);
                let mut conf: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                conf.sort_by(|a, b| b.total_cmp(a));
                let ranked =
                    ls.iter().zip(conf).map(|(l, c)| RankedLabel { label: l.to_string(), confidence: c }).collect();
                preds.insert(kind, PhonoPrediction::new(kind, ranked));
            }
        }
        if canonical.is_empty() {
            canonical.insert(ComponentKind::Movement, "p".into());
        }
        let got = score_phonological_agreement(&canonical, &preds).unwrap();
        worst = worst.max((got - eq2_oracle(&canonical, &preds)).abs());
    }
    use ComponentKind::*;
    let canonical: Phonology = [(HandshapeBase, "B".to_string()), (LocationMajor, "chest".to_string())].into();
    let rl = |v: &[(&str, f64)]| v.iter().map(|(l, c)| RankedLabel { label: l.to_string(), confidence: *c }).collect();
    let preds: PredictionSet = [
        (HandshapeBase, PhonoPrediction::new(HandshapeBase, rl(&[("B", 0.8), ("A", 0.1)]))),
        (LocationMajor, PhonoPrediction::new(LocationMajor, rl(&[("neck", 0.5), ("chest", 0.3)]))),
    ]
    .into();
    let worked = score_phonological_agreement(&canonical, &preds).unwrap();
    let ok = worst <= 1e-12 && (worked - 0.475).abs() <= 1e-12;
    report(
        2,
        "phonological agreement score",
        ok,
        &format!("max |diff| {worst:e} over 1000 pairs, worked example {worked}"),
    );
}

#[test]
fn criterion_3_clustering_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    for case in 0..500 {
        let n = rng.random_range(1..25);
        let dim = rng.random_range(2..6);
        let tau = rng.random_range(0.05..1.0);
        let samples: Vec<(String, Embedding)> = (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                (format!("k{i:02}"), Embedding::new(v).unwrap())
            })
            .collect();
        let p = match visual_id_gloss(&samples, tau) {
            Ok(p) => p,
            Err(e) => {
                // zero vectors are the only legitimate rejection
                if !samples.iter().any(|s| s.1.norm() == 0.0) {
                    failures.push(format!("case {case}: {e}"));
                }
                continue;
            }
        };
        if !p.is_partition_of(samples.iter().map(|s| s.0.as_str())) {
            failures.push(format!("case {case}: not a partition"));
        }
        if visual_id_gloss(&samples, tau).unwrap() != p {
            failures.push(format!("case {case}: nondeterministic"));
        }
        // replay the join log against our own centroid bookkeeping
        let units: BTreeMap<&str, Vec<f64>> = samples
            .iter()
            .map(|(k, e)| {
                let v = e.to_f64();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (k.as_str(), v.iter().map(|x| x / n).collect())
            })
            .collect();
        let mut groups: Vec<Vec<&str>> = Vec::new();
        for ev in &p.join_log {
            match ev.distance {
                None => groups.push(vec![ev.key.as_str()]),
                Some(_) => {
                    let g = &groups[ev.cluster_id];
                    let mut c = vec![0.0; dim];
                    for m in g {
                        for (a, x) in c.iter_mut().zip(&units[m]) {
                            *a += x / g.len() as f64;
                        }
                    }
                    let d = cos_d(&units[ev.key.as_str()], &c);
                    if d >= tau + 1e-12 {
                        failures.push(format!("case {case}: {} joined at {d} >= {tau}", ev.key));
                    }
                    groups[ev.cluster_id].push(ev.key.as_str());
                }
            }
        }
    }
    let bundles: Vec<(String, Embedding)> = [
        ("a1", [1.0, 0.0]),
        ("a2", [0.99, 0.05]),
        ("a3", [0.98, -0.05]),
        ("b1", [0.0, 1.0]),
        ("b2", [0.05, 0.99]),
        ("b3", [-0.05, 0.98]),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), Embedding::new(v.to_vec()).unwrap()))
    .collect();
    let two = visual_id_gloss(&bundles, 0.35).unwrap().clusters.len();
    let ok = failures.is_empty() && two == 2;
    report(
        3,
        "clustering contracts",
        ok,
        &format!(
            "500 random inputs, {} failures, bundle fixture -> {two} clusters {:?}",
            failures.len(),
            failures.first()
        ),
    );
}

fn multiset_oracle(a: &[String], b: &[String]) -> (bool, Vec<String>, Vec<String>) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort();
    sb.sort();
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < sa.len() || j < sb.len() {
        if j == sb.len() || (i < sa.len() && sa[i] < sb[j]) {
            missing.push(sa[i].clone());
            i += 1;
        } else if i == sa.len() || sb[j] < sa[i] {
            extra.push(sb[j].clone());
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    (sa == sb, missing, extra)
}

#[test]
fn criterion_4_validators() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let a: Vec<String> = (0..rng.random_range(0..7)).map(|_| vocab[rng.random_range(0..6)].clone()).collect();
        let b: Vec<String> = if rng.random_bool(0.4) {
            let mut b = a.clone();
            b.shuffle(&mut rng);
            b
        } else {
            (0..rng.random_range(0..7)).map(|_| vocab[rng.random_range(0..6)].clone()).collect()
        };
        let v = validate_tokens(&a, &b);
        let (ok, missing, extra) = multiset_oracle(&a, &b);
        if v.valid != ok || v.missing != missing || v.extra != extra {
            disagreements += 1;
        }
    }
    // partition validator against a counting oracle
    let mut part_disagreements = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(0..7);
        let keys: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let k = rng.random_range(0..4);
        let clusters: Vec<RefinedCluster> = (0..k)
            .map(|c| RefinedCluster {
                cluster_id: c,
                members: (0..rng.random_range(0..4)).map(|_| format!("s{}", rng.random_range(0..8))).collect(),
                justification: Value::Null,
            })
            .collect();
        let assigned: Vec<String> = clusters.iter().flat_map(|c| c.members.clone()).collect();
        let (same, missing, extra) = multiset_oracle(&keys, &assigned);
        let no_empty = clusters.iter().all(|c| !c.members.is_empty());
        let v = validate_partition(&keys, &clusters);
        let mut dup: Vec<String> = extra.iter().filter(|e| keys.contains(e)).cloned().collect();
        dup.dedup();
        let unknown: BTreeSet<String> = extra.iter().filter(|e| !keys.contains(e)).cloned().collect();
        if v.valid != (same && no_empty)
            || v.missing != missing
            || v.duplicates != dup
            || v.unknown != unknown.into_iter().collect::<Vec<_>>()
        {
            part_disagreements += 1;
        }
    }

    // corrupted partitions
    let mut count_changed = 0;
    let mut not_restored = 0;
    let mut restorable = 0;
    let mut overfull_valid = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let keys: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
        let k = rng.random_range(1..=n.min(5) + 1);
        let mut shuffled = keys.clone();
        shuffled.shuffle(&mut rng);
        let mut clusters: Vec<RefinedCluster> =
            (0..k).map(|c| RefinedCluster { cluster_id: c, members: vec![], justification: Value::Null }).collect();
        for (i, key) in shuffled.iter().enumerate() {
            let c = if i < k { i } else { rng.random_range(0..k) };
            clusters[c].members.push(key.clone());
        }
        for _ in 0..rng.random_range(1..5) {
            let c = rng.random_range(0..k);
            match rng.random_range(0..4) {
                0 => {
                    let key = keys[rng.random_range(0..n)].clone();
                    clusters[c].members.push(key);
                }
                1 => {
                    if !clusters[c].members.is_empty() {
                        let i = rng.random_range(0..clusters[c].members.len());
                        clusters[c].members.remove(i);
                    }
                }
                2 => clusters[c].members.push(format!("ghost{}", rng.random_range(0..3))),
                _ => clusters[c].members.clear(),
            }
        }
        let ev = CorrectionEvidence {
            units: keys
                .iter()
                .map(|k| {
                    let a: f64 = rng.random_range(0.0..1.5);
                    (k.clone(), vec![a.cos(), a.sin()])
                })
                .collect(),
            handedness: BTreeMap::new(),
        };
        let (out, _) = correction_pass(&keys, &clusters, &ev);
        if out.len() != clusters.len() {
            count_changed += 1;
        }
        // a topology-preserving fix exists iff 1 <= K <= |S|
        if (1..=n).contains(&clusters.len()) {
            restorable += 1;
            if !validate_partition(&keys, &out).valid {
                not_restored += 1;
            }
        } else if validate_partition(&keys, &out).valid {
            overfull_valid += 1;
        }
    }
    let ok =
        disagreements == 0 && part_disagreements == 0 && count_changed == 0 && not_restored == 0 && overfull_valid == 0;
    report(
        4,
        "token and partition validators",
        ok,
        &format!(
            "10000 token pairs: {disagreements} disagreements; 10000 partitions: {part_disagreements}; 1000 corrupted: {count_changed} count changes, {not_restored}/{restorable} not restored, {overfull_valid} overfull reported valid"
        ),
    );
}

/// Backend that misbehaves in a seeded, random way.
struct Adversary {
    rng: ChaCha8Rng,
    mode: u8,
}

impl DecisionBackend for Adversary {
    fn name(&self) -> String {
        format!("adversary:{}", self.mode)
    }

    fn next_step(&mut self, state: &EpisodeState, _tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let r: f64 = self.rng.random();
        let raw = match self.mode {
            // flood: keep calling tools forever
            0 => Step::tool("again", "echo", json!({"n": state.invocation_count})).to_raw(),
            // malformed output most of the time
            1 if r < 0.7 => ["", "{", "null", "{\"thought\": 1}", "{\"action\": {\"type\": \"tool\"}}"]
                [self.rng.random_range(0..5)]
            .to_string(),
            // erroring and unknown tools
            2 if r < 0.8 => {
                Step::tool("try", ["fail", "nope", "echo"][self.rng.random_range(0..3)], json!({"x": r})).to_raw()
            }
            // transport failure
            3 if r < 0.2 => return Err(BackendError::Transport("connection reset".into())),
            _ if r < 0.85 => Step::tool("work", "echo", json!({"r": r})).to_raw(),
            _ => Step::final_answer("done", json!({"calls": state.invocation_count})).to_raw(),
        };
        Ok(BackendReply::new(raw))
    }
}

fn fuzz_registry<'a>() -> ToolRegistry<'a> {
    let mut r = ToolRegistry::new();
    r.register_tool("echo", "echo", json!({"type": "object"}), |v| Ok(v.clone())).unwrap();
    r.register_tool("fail", "fails", json!({"type": "object"}), |_| Err(ToolError::Failed("boom".into()))).unwrap();
    r
}

#[test]
fn criterion_5_orchestrator_safety() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut statuses = BTreeMap::new();
    for ep in 0..1000u64 {
        let cfg = EpisodeConfig { cap: rng.random_range(1..8), retries: rng.random_range(0..3) };
        let mut backend = Adversary { rng: ChaCha8Rng::seed_from_u64(ep), mode: (ep % 4) as u8 };
        let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let mut reg = fuzz_registry();
            run_episode(json!({"episode": ep}), &mut backend, &mut reg, cfg)
        }));
        let Ok(out) = run else {
            failures.push(format!("episode {ep} panicked"));
            continue;
        };
        let t = &out.trace;
        *statuses.entry(format!("{:?}", t.rejection.as_ref().map(|r| r.kind))).or_insert(0) += 1;
        let calls = t.steps.iter().filter(|s| s.tool_call.is_some()).count();
        if t.invocation_count > cfg.cap || calls != t.invocation_count || t.status == EpisodeStatus::Running {
            failures.push(format!("episode {ep}: {} calls, cap {}", t.invocation_count, cfg.cap));
        }
        // the trace must survive serialisation and replay to the same document
        let text = serde_json::to_string(t).unwrap();
        let back: signagent::orchestrator::EpisodeTrace = serde_json::from_str(&text).unwrap();
        let mut replay = ReplayBackend::from_trace(&back);
        let mut reg = fuzz_registry();
        let again = run_episode(back.prompt.clone(), &mut replay, &mut reg, cfg);
        let doc = |d: &Option<Value>| d.as_ref().map(|v| serde_json::to_string(v).unwrap());
        if doc(&again.final_document) != doc(&out.final_document) {
            failures.push(format!("episode {ep}: replay differs"));
        }
        let transport = t.rejection.as_ref().is_some_and(|r| r.kind == RejectionKind::TransportError);
        if !transport && serde_json::to_string(&again.trace.steps).unwrap() != serde_json::to_string(&t.steps).unwrap()
        {
            failures.push(format!("episode {ep}: replayed steps differ"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = failures.is_empty() && secs < 60.0;
    report(
        5,
        "orchestrator safety",
        ok,
        &format!(
            "1000 episodes in {secs:.1}s, outcomes {statuses:?}, failures {:?}",
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_6_task1_end_to_end() {
    let t0 = Instant::now();
    let mut lcs = Vec::new();
    let mut detail = String::new();
    let mut exact = false;
    for sigma in [0.0, 0.2, 0.5] {
        let run = common::run_task1(sigma, 11);
        let c = &run.report.combined;
        let l = c.mean_lcs_percent.unwrap_or(0.0);
        if sigma == 0.0 {
            exact = l == 100.0 && c.mean_kendall_tau == Some(1.0) && c.rejected == 0;
        }
        detail.push_str(&format!("sigma {sigma}: LCS {l:.2} tau {:?} rejected {}; ", c.mean_kendall_tau, c.rejected));
        lcs.push(l);
    }
    let secs = t0.elapsed().as_secs_f64();
    let monotone = lcs.windows(2).all(|w| w[1] <= w[0]);
    let ok = exact && lcs[1] >= 80.0 && monotone && secs < 120.0;
    report(6, "synthetic pseudo-gloss end to end", ok, &format!("{detail}{secs:.1}s"));
}

#[test]
fn criterion_7_task2_end_to_end() {
    let t0 = Instant::now();
    let run = common::run_task2(13);
    let mut problems = Vec::new();
    for (r, g) in run.records.iter().zip(&run.fixture.id_glosses) {
        if !r.validation_status.is_valid() {
            problems.push(format!("{}: {:?}", r.gloss, r.validation_status));
        }
        let assign = r.assignment();
        for s in &g.samples {
            if s.planted {
                let mate = g.samples.iter().find(|o| !o.planted && o.variant == s.variant).unwrap();
                if assign.get(&s.record.sample_id) != assign.get(&mate.record.sample_id) {
                    problems.push(format!("{}: planted {} not merged", r.gloss, s.record.sample_id));
                }
                let base_alone = r.baseline.clusters.iter().any(|c| c.members == vec![s.record.sample_id.clone()]);
                if !base_alone {
                    problems.push(format!("{}: planted {} was not a baseline singleton", r.gloss, s.record.sample_id));
                }
            }
        }
        let variant_ids: BTreeSet<Option<&usize>> = g
            .samples
            .iter()
            .filter(|s| !s.planted)
            .map(|s| (s.variant, assign.get(&s.record.sample_id)))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|(_, c)| c)
            .collect();
        if variant_ids.len() != 2 {
            problems.push(format!("{}: variants not kept apart", r.gloss));
        }
    }
    let (b, f) = (&run.baseline_eval, &run.refined_eval);
    let fewer = f.ids_per_gloss < b.ids_per_gloss;
    let lower_h = f.mean_entropy_bits < b.mean_entropy_bits;
    let higher_sil = f.silhouette.unwrap_or(f64::MIN) > b.silhouette.unwrap_or(f64::MAX);
    let secs = t0.elapsed().as_secs_f64();
    let ok = problems.is_empty() && fewer && lower_h && higher_sil && secs < 120.0;
    report(
        7,
        "synthetic ID-gloss end to end",
        ok,
        &format!(
            "IDs/gloss {:.2} -> {:.2}, H {:.3} -> {:.3}, silhouette {:.3} -> {:.3}, {secs:.1}s, problems {problems:?}",
            b.ids_per_gloss,
            f.ids_per_gloss,
            b.mean_entropy_bits,
            f.mean_entropy_bits,
            b.silhouette.unwrap_or(f64::NAN),
            f.silhouette.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_8_gbdt_ranker() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<(Vec<f64>, f64)> = (0..300)
        .map(|_| {
            let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let y = (0.7 * x[0] + 0.3 * x[1]).clamp(0.0, 1.0);
            (x, y)
        })
        .collect();
    let cfg = GbdtConfig { subsample: 0.8, seed: 99, n_trees: 100, ..GbdtConfig::default() };
    let a = train_ranker(&rows, &cfg).unwrap();
    let b = train_ranker(&rows, &cfg).unwrap();
    let deterministic = a == b;
    let p: Vec<f64> = rows.iter().map(|r| a.predict(&r.0).unwrap()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let rho = spearman(&p, &y);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ranker.json");
    a.save(&path).unwrap();
    let c = Gbdt::load(&path).unwrap();
    let exact = rows.iter().all(|r| a.predict(&r.0).unwrap().to_bits() == c.predict(&r.0).unwrap().to_bits());
    let ok = deterministic && rho >= 0.99 && exact;
    report(
        8,
        "GBDT ranker",
        ok,
        &format!("deterministic {deterministic}, Spearman {rho:.4}, round trip bit-exact {exact}"),
    );
}

/// Minimal HTTP/1.1 server answering each request with the next canned
/// (status, body) pair; records request bodies and auth headers.
struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<(Option<String>, Value)>>>,
}

fn stub(responses: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            stream.set_read_timeout(Some(Duration::from_secs(5))).ok();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).ok();
            log.lock().unwrap().push((auth, serde_json::from_slice(&buf).unwrap_or(Value::Null)));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).ok();
        }
    });
    Stub { url, requests }
}

fn tool_call(name: &str, args: Value) -> (u16, String) {
    let body = json!({"choices": [{"message": {"role": "assistant", "content": "", "tool_calls": [
        {"id": "c", "type": "function", "function": {"name": name, "arguments": args.to_string()}}
    ]}}]});
    (200, body.to_string())
}

fn final_msg(answer: Value) -> (u16, String) {
    let content = Step::final_answer("done", answer).to_raw();
    (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
}

fn http_backend(url: &str, key: Option<&str>) -> HttpBackend {
    let mut cfg = HttpConfig::new(url, "stub-model");
    cfg.api_key = key.map(String::from);
    cfg.backoff_base_ms = 1;
    cfg.timeout_secs = 5;
    HttpBackend::new(cfg, Arc::new(Semaphore::new(2))).unwrap()
}

#[test]
fn criterion_9_http_backend() {
    let mut checks = Vec::new();
    let two_tools = || {
        let mut r = ToolRegistry::new();
        r.register_tool("add", "sum of a and b", json!({"type": "object", "required": ["a", "b"]}), |v| {
            Ok(json!(v["a"].as_f64().unwrap_or(0.0) + v["b"].as_f64().unwrap_or(0.0)))
        })
        .unwrap();
        r.register_tool("echo", "echo", json!({"type": "object"}), |v| Ok(v.clone())).unwrap();
        r
    };
    let cfg = EpisodeConfig::new(4);

    // two-tool episode, with a transient 503 absorbed by the retry budget
    let s = stub(vec![
        tool_call("add", json!({"a": 1, "b": 2})),
        (503, "{}".into()),
        tool_call("echo", json!({"x": "y"})),
        final_msg(json!({"sum": 3})),
    ]);
    let mut reg = two_tools();
    let out = run_episode(json!({"task": "demo"}), &mut http_backend(&s.url, Some("secret")), &mut reg, cfg);
    let reqs = s.requests.lock().unwrap().clone();
    let tool_msgs =
        reqs.last().map_or(0, |r| r.1["messages"].as_array().unwrap().iter().filter(|m| m["role"] == "tool").count());
    checks.push((
        "two-tool episode",
        out.completed()
            && out.trace.invocation_count == 2
            && out.final_document == Some(json!({"sum": 3}))
            && reqs.len() == 4
            && reqs.iter().all(|r| r.0.as_deref() == Some("Bearer secret"))
            && tool_msgs == 2
            && reqs[0].1["tools"].as_array().map_or(0, Vec::len) == 2,
    ));

    // retry limit: max_retries 2 means three attempts, then a transport rejection
    let s = stub(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into()), final_msg(json!({}))]);
    let mut reg = two_tools();
    let out = run_episode(json!({}), &mut http_backend(&s.url, None), &mut reg, cfg);
    let n = s.requests.lock().unwrap().len();
    checks.push((
        "retry limit",
        out.trace.rejection.as_ref().map(|r| r.kind) == Some(RejectionKind::TransportError) && n == 3,
    ));

    // auth errors are not retried
    let s = stub(vec![(401, "{\"error\": \"bad key\"}".into()), final_msg(json!({}))]);
    let mut reg = two_tools();
    let out = run_episode(json!({}), &mut http_backend(&s.url, Some("wrong")), &mut reg, cfg);
    let n = s.requests.lock().unwrap().len();
    checks
        .push(("auth error", out.trace.rejection.as_ref().map(|r| r.kind) == Some(RejectionKind::AuthError) && n == 1));

    // transport: nothing listening
    let dead = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let mut reg = two_tools();
    let out = run_episode(json!({}), &mut http_backend(&dead, None), &mut reg, cfg);
    checks
        .push(("transport error", out.trace.rejection.as_ref().map(|r| r.kind) == Some(RejectionKind::TransportError)));

    // schema errors consume the malformed-output budget, then reject
    let s = stub(vec![
        (200, "not json".into()),
        (200, "{\"choices\": []}".into()),
        (200, "{\"choices\": [{\"message\": {\"content\": \"hello\"}}]}".into()),
    ]);
    let mut reg = two_tools();
    let out = run_episode(json!({}), &mut http_backend(&s.url, None), &mut reg, cfg);
    let n = s.requests.lock().unwrap().len();
    checks.push((
        "schema error",
        out.trace.rejection.as_ref().map(|r| r.kind) == Some(RejectionKind::MalformedStep)
            && n == 3
            && out.trace.steps[0].raw_outputs.len() == 3,
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        9,
        "HTTP backend against a local stub",
        failed.is_empty(),
        &format!("{} checks, failed {failed:?}", checks.len()),
    );
}
