//! Seeded synthetic fixtures with constructed ground truth.
//!
//! Keypoints are rendered from phonological labels so that the component
//! classifiers recover the labels exactly on noiseless renders. Embedding
//! noise is isotropic with expected norm `sigma`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basetools::handshape::handshape_feature;
use crate::basetools::movement::movement_feature;
use crate::basetools::{KindBank, LemmaTable, MovementConfig, Prototype, PrototypeBank};
use crate::datamodel::features::{body, BodyFrame, Hand, HandJoints, Point3, HAND_JOINTS};
use crate::datamodel::phonology::{
    HANDSHAPE_BASE_LABELS, HANDSHAPE_MINOR_LABELS, LOCATION_MINOR_LABELS, MOVEMENT_LABELS,
};
use crate::datamodel::{
    write_dictionary, write_embedding_file, write_keypoint_file, write_manifest, ComponentKind, DataError, DataResult,
    DatasetManifest, Dictionary, DictionaryEntry, Embedding, FeatureRefs, FrameFeatures, FrameSpan, Handedness,
    Phonology, SampleFeatures, SampleRecord,
};

pub const WORDS: &[&str] = &[
    "house", "dog", "cat", "tree", "water", "book", "school", "friend", "mother", "father", "car", "food", "work",
    "play", "happy", "sad", "rain", "sun", "city", "music", "money", "doctor", "teacher", "family", "church", "bread",
    "milk", "coffee", "garden", "window", "table", "chair", "phone", "letter", "river", "mountain", "island", "winter",
    "summer", "morning", "evening", "night", "week", "year", "apple", "orange", "flower", "horse", "bird", "fish",
    "train", "bus", "ship", "road", "bridge", "market", "kitchen", "paper", "story", "game", "color", "voice",
    "hospital", "library",
];

pub const STOPWORDS: &[&str] = &["the", "a", "an", "is", "are", "was", "to", "of", "in", "on", "and", "my", "it", "at"];

/// Seed for the hand templates; fixed so banks do not depend on the fixture seed.
const TEMPLATE_SEED: u64 = 0x5157_4e00;
const MOVE_AMPLITUDE: f64 = 0.06;
const HEAD_Y: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub glosses: usize,
    pub sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Expected norm of the noise added to segment embeddings.
    pub sigma: f64,
    pub dim: usize,
    pub eval_dim: usize,
    pub sign_frames: usize,
    pub gap_frames: usize,
    pub frame_rate: f64,
    pub idgloss_glosses: usize,
    pub variant_members: usize,
    /// Cosine distance of the planted singleton from its variant centre.
    pub planted_distance: f64,
    /// Renders per label in each prototype bank.
    pub bank_copies: usize,
    pub two_handed_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            glosses: 50,
            sentences: 30,
            min_tokens: 3,
            max_tokens: 6,
            sigma: 0.0,
            dim: 32,
            eval_dim: 16,
            sign_frames: 16,
            gap_frames: 8,
            frame_rate: 25.0,
            idgloss_glosses: 4,
            variant_members: 4,
            planted_distance: 0.43,
            bank_copies: 5,
            two_handed_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignHands {
    Right,
    Left,
    Both,
}

impl SignHands {
    fn uses(self, hand: Hand) -> bool {
        matches!((self, hand), (SignHands::Both, _) | (SignHands::Right, Hand::Right) | (SignHands::Left, Hand::Left))
    }

    #[cfg(test)]
    fn dominant(self) -> Hand {
        if self == SignHands::Left {
            Hand::Left
        } else {
            Hand::Right
        }
    }
}

fn side(hand: Hand) -> f64 {
    match hand {
        Hand::Right => 1.0,
        Hand::Left => -1.0,
    }
}

fn label_index(labels: &[&str], label: &str) -> usize {
    labels.iter().position(|l| *l == label).unwrap_or(0)
}

/// Hand joints for a (base, minor) handshape, wrist at the origin, fingers along +y.
pub fn hand_template(base: &str, minor: &str) -> HandJoints {
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED + label_index(HANDSHAPE_BASE_LABELS, base) as u64);
    let curls: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.5)).collect();
    let spreads: Vec<f64> = (0..5).map(|_| rng.random_range(-0.15..0.15)).collect();
    let knuckles = [[0.35, 0.3, 0.1], [-0.2, 0.8, 0.0], [-0.07, 0.85, 0.0], [0.06, 0.83, 0.0], [0.19, 0.76, 0.0]];
    let lengths = [0.35, 0.25, 0.2];
    let mut j = [[0.0; 3]; HAND_JOINTS];
    for f in 0..5 {
        let (mut curl, mut spread, mut first, mut extra) = (curls[f], spreads[f] + (f as f64 - 2.0) * 0.12, 0.0, 0.0);
        match minor {
            "bent" => first = 0.6,
            "flat" => curl *= 0.3,
            "spread" => spread *= 2.5,
            "curved" => extra = 0.3,
            _ => {}
        }
        let mut p = knuckles[f];
        j[1 + 4 * f] = p;
        let mut angle = 0.0;
        for (s, len) in lengths.iter().enumerate() {
            angle += curl / 3.0 + extra + if s == 0 { first } else { 0.0 };
            let dir = [spread.sin() * angle.cos(), spread.cos() * angle.cos(), -angle.sin()];
            p = [p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]];
            j[2 + 4 * f + s] = p;
        }
    }
    j
}

/// Wrist offset at normalised time `u` for a movement label.
pub fn movement_offset(label: &str, u: f64, amplitude: f64) -> Point3 {
    use std::f64::consts::PI;
    let a = amplitude;
    match label {
        "straight" => [a * (2.0 * u - 1.0), 0.5 * a * (2.0 * u - 1.0), 0.0],
        "arc" => [a * (PI * u).cos(), a * (PI * u).sin(), 0.0],
        "circle" => [a * (2.0 * PI * u).cos(), a * (2.0 * PI * u).sin(), 0.0],
        "zigzag" => {
            let t = (3.0 * u).fract();
            [a * (1.0 - 4.0 * (t - 0.5).abs()), a * (u - 0.5), 0.0]
        }
        "oscillate" => [a * (4.0 * PI * u).sin(), 0.0, 0.0],
        "tap" => [0.0, 0.0, a * (3.0 * PI * u).sin().abs()],
        _ => [0.0, 0.0, 0.0],
    }
}

fn major_y(label: &str) -> f64 {
    match label {
        "head" => 0.7,
        "neck" => 0.35,
        "chest" => 0.0,
        "torso" => -0.5,
        _ => -1.0,
    }
}

/// Target (lateral toward the hand's own side, depth) for a minor location.
pub fn minor_target(label: &str) -> [f64; 2] {
    match label {
        "ipsilateral" => [0.35, 0.3],
        "contralateral" => [-0.3, 0.3],
        "forward" => [0.0, 0.65],
        "contact" => [0.0, 0.05],
        _ => [0.0, 0.3],
    }
}

fn rest(hand: Hand) -> Point3 {
    [side(hand) * 0.35, -1.3, 0.15]
}

fn base_body() -> BodyFrame {
    let mut f = [[0.0; 3]; body::COUNT];
    f[body::HEAD] = [0.0, HEAD_Y, 0.0];
    f[body::NECK] = [0.0, 0.5, 0.0];
    f[body::LEFT_SHOULDER] = [-0.5, 0.0, 0.0];
    f[body::RIGHT_SHOULDER] = [0.5, 0.0, 0.0];
    f[body::LEFT_ELBOW] = [-0.6, -0.6, 0.1];
    f[body::RIGHT_ELBOW] = [0.6, -0.6, 0.1];
    f[body::LEFT_WRIST] = rest(Hand::Left);
    f[body::RIGHT_WRIST] = rest(Hand::Right);
    f[body::MID_HIP] = [0.0, -1.6, 0.0];
    f
}

fn place(template: &HandJoints, wrist: Point3, hand: Hand) -> HandJoints {
    let s = side(hand);
    let mut out = [[0.0; 3]; HAND_JOINTS];
    for (o, p) in out.iter_mut().zip(template) {
        *o = [wrist[0] + s * p[0], wrist[1] + p[1], wrist[2] + p[2]];
    }
    out
}

fn label(p: &Phonology, kind: ComponentKind) -> &str {
    p.get(&kind).map(String::as_str).unwrap_or("")
}

fn wrist_at(p: &Phonology, hand: Hand, u: f64, amplitude: f64) -> Point3 {
    let m = movement_offset(label(p, ComponentKind::Movement), u, amplitude);
    let [lat, depth] = minor_target(label(p, ComponentKind::LocationMinor));
    [side(hand) * (lat + m[0]), major_y(label(p, ComponentKind::LocationMajor)) + m[1], depth + m[2]]
}

struct Track {
    body: Vec<BodyFrame>,
    left: Vec<Option<HandJoints>>,
    right: Vec<Option<HandJoints>>,
}

impl Track {
    fn new() -> Self {
        Track { body: Vec::new(), left: Vec::new(), right: Vec::new() }
    }

    fn push_sign(&mut self, p: &Phonology, hands: SignHands, frames: usize, amplitude: f64) {
        let template = hand_template(label(p, ComponentKind::HandshapeBase), label(p, ComponentKind::HandshapeMinor));
        for i in 0..frames {
            let u = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let mut b = base_body();
            let mut hj = [None, None];
            for (slot, hand) in [Hand::Left, Hand::Right].into_iter().enumerate() {
                if hands.uses(hand) {
                    let w = wrist_at(p, hand, u, amplitude);
                    b[hand.wrist_index()] = w;
                    hj[slot] = Some(place(&template, w, hand));
                }
            }
            self.body.push(b);
            self.left.push(hj[0]);
            self.right.push(hj[1]);
        }
    }

    /// Wrists move linearly from the current pose to `to` with no hand detected.
    fn push_gap(&mut self, to: [Point3; 2], frames: usize) {
        let from = self
            .body
            .last()
            .map_or([rest(Hand::Left), rest(Hand::Right)], |b| [b[body::LEFT_WRIST], b[body::RIGHT_WRIST]]);
        for i in 1..=frames {
            let u = i as f64 / (frames + 1) as f64;
            let mut b = base_body();
            for (k, hand) in [Hand::Left, Hand::Right].into_iter().enumerate() {
                let w = std::array::from_fn(|a| from[k][a] + u * (to[k][a] - from[k][a]));
                b[hand.wrist_index()] = w;
            }
            self.body.push(b);
            self.left.push(None);
            self.right.push(None);
        }
    }

    fn finish(self, frame_rate: f64) -> FrameFeatures {
        FrameFeatures { body: self.body, left_hand: self.left, right_hand: self.right, frame_rate }
    }
}

fn start_pose(p: &Phonology, hands: SignHands) -> [Point3; 2] {
    let pos = |h: Hand| if hands.uses(h) { wrist_at(p, h, 0.0, MOVE_AMPLITUDE) } else { rest(h) };
    [pos(Hand::Left), pos(Hand::Right)]
}

/// Renders one isolated sign.
pub fn render_sign(p: &Phonology, hands: SignHands, frames: usize, frame_rate: f64) -> FrameFeatures {
    let mut t = Track::new();
    t.push_sign(p, hands, frames, MOVE_AMPLITUDE);
    t.finish(frame_rate)
}

/// Renders signs separated by transition gaps; returns the sign spans.
pub fn render_sequence(signs: &[(Phonology, SignHands)], cfg: &SynthConfig) -> (FrameFeatures, Vec<FrameSpan>) {
    let mut t = Track::new();
    let mut spans = Vec::new();
    for (p, hands) in signs {
        t.push_gap(start_pose(p, *hands), cfg.gap_frames);
        let start = t.body.len();
        t.push_sign(p, *hands, cfg.sign_frames, MOVE_AMPLITUDE);
        spans.push(FrameSpan::new(start, t.body.len()));
    }
    t.push_gap([rest(Hand::Left), rest(Hand::Right)], cfg.gap_frames);
    (t.finish(cfg.frame_rate), spans)
}

/// Prototype banks rendered with the same generator as the fixtures.
pub fn build_bank(cfg: &SynthConfig) -> DataResult<PrototypeBank> {
    let copies = cfg.bank_copies.max(1);
    let mut base = Vec::new();
    let mut minor = Vec::new();
    for b in HANDSHAPE_BASE_LABELS {
        for m in HANDSHAPE_MINOR_LABELS {
            let hand = hand_template(b, m);
            for c in 0..copies {
                // the feature is scale invariant, so scaled renders coincide
                let scale = 1.0 + 0.05 * c as f64;
                let scaled = hand.map(|p| p.map(|v| v * scale));
                let f = handshape_feature(&[Some(scaled)]).map_err(|e| DataError::InvalidSample(e.to_string()))?;
                base.push(Prototype { label: b.to_string(), vector: f.clone() });
                minor.push(Prototype { label: m.to_string(), vector: f });
            }
        }
    }
    let mc = MovementConfig::default();
    let mut movement = Vec::new();
    for mv in MOVEMENT_LABELS {
        let p: Phonology = [
            (ComponentKind::Movement, mv.to_string()),
            (ComponentKind::LocationMajor, "chest".to_string()),
            (ComponentKind::LocationMinor, "center".to_string()),
        ]
        .into();
        for hands in [SignHands::Right, SignHands::Left, SignHands::Both] {
            for c in 0..copies {
                let amp = MOVE_AMPLITUDE * (1.0 + 0.1 * (c as f64 - (copies - 1) as f64 / 2.0));
                let mut t = Track::new();
                t.push_sign(&p, hands, cfg.sign_frames, amp);
                let f = t.finish(cfg.frame_rate);
                let v = movement_feature(
                    &f.wrist_trajectory(Hand::Left),
                    &f.wrist_trajectory(Hand::Right),
                    cfg.frame_rate,
                    &mc,
                )
                .map_err(|e| DataError::InvalidSample(e.to_string()))?;
                movement.push(Prototype { label: mv.to_string(), vector: v });
            }
        }
    }
    let location_minor = LOCATION_MINOR_LABELS
        .iter()
        .map(|l| Prototype { label: l.to_string(), vector: minor_target(l).to_vec() })
        .collect();
    let kinds = [
        (
            ComponentKind::HandshapeBase,
            KindBank { dim: crate::basetools::handshape::HANDSHAPE_FEATURE_DIM, prototypes: base },
        ),
        (
            ComponentKind::HandshapeMinor,
            KindBank { dim: crate::basetools::handshape::HANDSHAPE_FEATURE_DIM, prototypes: minor },
        ),
        (ComponentKind::Movement, KindBank { dim: mc.feature_dim(), prototypes: movement }),
        (ComponentKind::LocationMinor, KindBank { dim: 2, prototypes: location_minor }),
    ];
    PrototypeBank::new(kinds.into_iter().collect()).map_err(|e| DataError::InvalidSample(e.to_string()))
}

pub fn plural(word: &str) -> String {
    let consonant_y = word.ends_with('y') && !word[..word.len() - 1].ends_with(['a', 'e', 'i', 'o', 'u']);
    if consonant_y {
        format!("{}ies", &word[..word.len() - 1])
    } else if word.ends_with(['s', 'x']) || word.ends_with("sh") || word.ends_with("ch") {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

/// Stopwords plus a plural-to-singular lemma map for every word.
pub fn lemma_table() -> LemmaTable {
    let lemmas = WORDS.iter().map(|w| (plural(w), w.to_string())).collect();
    LemmaTable::new(lemmas, STOPWORDS.iter().map(|s| s.to_string()).collect())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noise(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    let s = sigma / (dim as f64).sqrt();
    (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn embedding(v: &[f64]) -> DataResult<Embedding> {
    Embedding::from_f64(v).map_err(|e| DataError::InvalidEmbedding(e.to_string()))
}

fn random_phonology(rng: &mut ChaCha8Rng) -> Phonology {
    ComponentKind::ALL
        .iter()
        .map(|&k| {
            let labels = k.labels();
            (k, labels[rng.random_range(0..labels.len())].to_string())
        })
        .collect()
}

fn hands_for(h: Handedness) -> SignHands {
    if h == Handedness::TwoHanded {
        SignHands::Both
    } else {
        SignHands::Right
    }
}

#[derive(Debug, Clone)]
pub struct SynthSentence {
    pub record: SampleRecord,
    pub features: SampleFeatures,
    /// Gloss words in signing order.
    pub reference: Vec<String>,
    pub gloss_ids: Vec<String>,
    pub spans: Vec<FrameSpan>,
}

#[derive(Debug, Clone)]
pub struct SynthIdSample {
    pub record: SampleRecord,
    pub features: SampleFeatures,
    pub eval_embedding: Embedding,
    /// 0 or 1.
    pub variant: usize,
    pub planted: bool,
}

#[derive(Debug, Clone)]
pub struct SynthGloss {
    pub gloss_id: String,
    pub samples: Vec<SynthIdSample>,
    pub variant_phonology: [Phonology; 2],
    pub variant_hands: [SignHands; 2],
}

impl SynthGloss {
    /// True variant groups, each sorted, ordered by smallest key.
    pub fn expected_clusters(&self) -> Vec<Vec<String>> {
        let mut groups: Vec<Vec<String>> = (0..2)
            .map(|v| {
                let mut g: Vec<String> =
                    self.samples.iter().filter(|s| s.variant == v).map(|s| s.record.sample_id.clone()).collect();
                g.sort();
                g
            })
            .filter(|g| !g.is_empty())
            .collect();
        groups.sort();
        groups
    }

    pub fn planted(&self) -> Vec<String> {
        self.samples.iter().filter(|s| s.planted).map(|s| s.record.sample_id.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub config: SynthConfig,
    pub dictionary: Dictionary,
    pub bank: PrototypeBank,
    pub lemmas: LemmaTable,
    pub sentences: Vec<SynthSentence>,
    pub id_glosses: Vec<SynthGloss>,
}

impl SynthFixture {
    pub fn references(&self) -> BTreeMap<String, Vec<String>> {
        self.sentences.iter().map(|s| (s.record.sample_id.clone(), s.reference.clone())).collect()
    }
}

fn check(cfg: &SynthConfig) -> DataResult<()> {
    let bad = |m: &str| Err(DataError::InvalidSample(m.to_string()));
    if cfg.glosses == 0 || cfg.glosses > WORDS.len() {
        return bad("glosses must be in 1..=64");
    }
    if cfg.min_tokens == 0 || cfg.min_tokens > cfg.max_tokens || cfg.max_tokens > cfg.glosses {
        return bad("token range must satisfy 1 <= min <= max <= glosses");
    }
    if cfg.idgloss_glosses > cfg.glosses {
        return bad("idgloss_glosses exceeds glosses");
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) || cfg.dim < 2 || cfg.eval_dim < 2 {
        return bad("sigma must be >= 0 and dimensions >= 2");
    }
    if cfg.sign_frames < 4 || cfg.gap_frames == 0 || !(cfg.frame_rate > 0.0) {
        return bad("sign_frames >= 4, gap_frames >= 1 and frame_rate > 0 required");
    }
    if !(cfg.planted_distance > 0.0 && cfg.planted_distance < 1.0) || cfg.variant_members == 0 {
        return bad("planted_distance must be in (0, 1) and variant_members >= 1");
    }
    Ok(())
}

pub fn generate(cfg: &SynthConfig) -> DataResult<SynthFixture> {
    check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut words: Vec<&str> = WORDS.to_vec();
    words.shuffle(&mut rng);
    words.truncate(cfg.glosses);

    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for w in &words {
        let phon = loop {
            let p = random_phonology(&mut rng);
            let key: Vec<String> = p.values().cloned().collect();
            if seen.insert(key) {
                break p;
            }
        };
        let handedness = if rng.random_bool(cfg.two_handed_fraction.clamp(0.0, 1.0)) {
            Handedness::TwoHanded
        } else {
            Handedness::OneHanded
        };
        entries.push(DictionaryEntry {
            gloss_id: w.to_uppercase(),
            canonical_phonology: phon,
            reference_embedding: embedding(&random_unit(&mut rng, cfg.dim))?,
            handedness,
            frequency: Some(rng.random_range(1.0..100.0f64).round()),
        });
    }
    let dictionary = Dictionary::new(entries.clone())?;
    let bank = build_bank(cfg)?;

    let mut sentences = Vec::with_capacity(cfg.sentences);
    for i in 0..cfg.sentences {
        let n = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let chosen: Vec<&DictionaryEntry> = entries.choose_multiple(&mut rng, n).collect();
        let mut spoken: Vec<usize> = (0..n).collect();
        spoken.shuffle(&mut rng);
        let mut text = Vec::new();
        for &k in &spoken {
            if rng.random_bool(0.4) {
                text.push(STOPWORDS[rng.random_range(0..STOPWORDS.len())].to_string());
            }
            let w = chosen[k].gloss_word();
            text.push(if rng.random_bool(0.3) { plural(&w) } else { w });
        }
        let mut sentence = text.join(" ");
        sentence.push('.');
        if let Some(first) = sentence.get(..1) {
            sentence = first.to_uppercase() + &sentence[1..];
        }

        let signs: Vec<(Phonology, SignHands)> =
            chosen.iter().map(|e| (e.canonical_phonology.clone(), hands_for(e.handedness))).collect();
        let (frames, spans) = render_sequence(&signs, cfg);
        let gap = embedding(&random_unit(&mut rng, cfg.dim))?;
        let mut embs = vec![gap; frames.len()];
        for (e, span) in chosen.iter().zip(&spans) {
            let z = noise(&mut rng, cfg.dim, cfg.sigma);
            let v = embedding(&add(&e.reference_embedding.to_f64(), &z))?;
            for slot in &mut embs[span.start_frame..span.end_frame] {
                *slot = v.clone();
            }
        }
        let id = format!("sent-{i:03}");
        let features = SampleFeatures::new(id.clone(), frames, embs)?;
        let record = SampleRecord {
            sample_id: id.clone(),
            sentence: Some(sentence),
            gloss_label: None,
            subset: Some(if i % 2 == 0 { "fair" } else { "poor" }.to_string()),
            segments: Some(spans.clone()),
            frame_rate: Some(cfg.frame_rate),
            feature_refs: FeatureRefs {
                embeddings: format!("features/{id}.emb").into(),
                keypoints: format!("features/{id}.kpt").into(),
                eval_embedding: None,
            },
        };
        sentences.push(SynthSentence {
            record,
            features,
            reference: chosen.iter().map(|e| e.gloss_word()).collect(),
            gloss_ids: chosen.iter().map(|e| e.gloss_id.clone()).collect(),
            spans,
        });
    }

    let mut id_glosses = Vec::new();
    for e in entries.iter().take(cfg.idgloss_glosses) {
        let a = e.canonical_phonology.clone();
        let mut b = a.clone();
        for kind in [ComponentKind::HandshapeBase, ComponentKind::Movement, ComponentKind::LocationMajor] {
            let labels = kind.labels();
            let cur = label_index(labels, &a[&kind]);
            let shift = rng.random_range(1..labels.len());
            b.insert(kind, labels[(cur + shift) % labels.len()].to_string());
        }
        let hands_a = hands_for(e.handedness);
        let hands_b = if hands_a == SignHands::Both { SignHands::Right } else { SignHands::Both };

        let centre_a = e.reference_embedding.unit().map_err(|err| DataError::InvalidEmbedding(err.to_string()))?;
        let centre_b = random_unit(&mut rng, cfg.dim);
        // planted singleton: unit vector at a fixed angle from centre A
        let ortho = {
            let r = random_unit(&mut rng, cfg.dim);
            let d: f64 = r.iter().zip(&centre_a).map(|(x, y)| x * y).sum();
            let o: Vec<f64> = r.iter().zip(&centre_a).map(|(x, y)| x - d * y).collect();
            let n = o.iter().map(|x| x * x).sum::<f64>().sqrt();
            o.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let cos = 1.0 - cfg.planted_distance;
        let sin = (1.0 - cos * cos).sqrt();
        let planted: Vec<f64> = centre_a.iter().zip(&ortho).map(|(a, o)| cos * a + sin * o).collect();
        let eval_a = random_unit(&mut rng, cfg.eval_dim);
        let eval_b = random_unit(&mut rng, cfg.eval_dim);

        let mut specs: Vec<(usize, bool)> = Vec::new();
        for v in 0..2 {
            specs.extend(std::iter::repeat_n((v, false), cfg.variant_members));
        }
        specs.push((0, true));
        specs.shuffle(&mut rng);

        let mut samples = Vec::new();
        for (idx, (variant, is_planted)) in specs.into_iter().enumerate() {
            let id = format!("{}-{idx:02}", e.gloss_word());
            let (phon, hands) = if variant == 0 { (&a, hands_a) } else { (&b, hands_b) };
            let centre = if is_planted {
                &planted
            } else if variant == 0 {
                &centre_a
            } else {
                &centre_b
            };
            let v = embedding(&add(centre, &noise(&mut rng, cfg.dim, 0.02)))?;
            let ev_centre = if variant == 0 { &eval_a } else { &eval_b };
            let eval_embedding = embedding(&add(ev_centre, &noise(&mut rng, cfg.eval_dim, 0.15)))?;
            let frames = render_sign(phon, hands, cfg.sign_frames, cfg.frame_rate);
            let features = SampleFeatures::new(id.clone(), frames, vec![v; cfg.sign_frames])?;
            let record = SampleRecord {
                sample_id: id.clone(),
                sentence: None,
                gloss_label: Some(e.gloss_id.clone()),
                subset: None,
                segments: None,
                frame_rate: Some(cfg.frame_rate),
                feature_refs: FeatureRefs {
                    embeddings: format!("features/{id}.emb").into(),
                    keypoints: format!("features/{id}.kpt").into(),
                    eval_embedding: Some(format!("features/{id}.eval.emb").into()),
                },
            };
            samples.push(SynthIdSample { record, features, eval_embedding, variant, planted: is_planted });
        }
        samples.sort_by(|x, y| x.record.sample_id.cmp(&y.record.sample_id));
        id_glosses.push(SynthGloss {
            gloss_id: e.gloss_id.clone(),
            samples,
            variant_phonology: [a, b],
            variant_hands: [hands_a, hands_b],
        });
    }

    Ok(SynthFixture { config: cfg.clone(), dictionary, bank, lemmas: lemma_table(), sentences, id_glosses })
}

#[derive(Serialize, Deserialize)]
pub struct ReferenceLine {
    pub sample_id: String,
    #[serde(default)]
    pub subset: Option<String>,
    pub reference: Vec<String>,
    #[serde(default)]
    pub gloss_ids: Vec<String>,
    #[serde(default)]
    pub segments: Vec<FrameSpan>,
}

#[derive(Serialize, Deserialize)]
pub struct ExpectedClusters {
    pub expected_clusters: Vec<Vec<String>>,
    pub planted_singletons: Vec<String>,
}

/// Paths of the files written by [`write_fixture`], relative to its root.
pub mod layout {
    pub const DICTIONARY: &str = "dictionary.json";
    pub const BANKS: &str = "banks.json";
    pub const STOPWORDS: &str = "lexicon/stopwords.txt";
    pub const LEMMAS: &str = "lexicon/lemmas.tsv";
    pub const TASK1_MANIFEST: &str = "task1/manifest.jsonl";
    pub const TASK1_REFERENCES: &str = "task1/references.jsonl";
    pub const TASK2_MANIFEST: &str = "task2/manifest.jsonl";
    pub const TASK2_EXPECTED: &str = "task2/expected.json";
    pub const CONFIG: &str = "fixture.json";
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |e| DataError::io(path, e)
}

fn write_text(path: &Path, text: &str) -> DataResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

fn write_samples<'a>(
    dir: &Path,
    samples: impl Iterator<Item = (&'a SampleRecord, &'a SampleFeatures, Option<&'a Embedding>)>,
) -> DataResult<DatasetManifest> {
    let feat = dir.join("features");
    std::fs::create_dir_all(&feat).map_err(io(&feat))?;
    let mut records = Vec::new();
    for (record, features, eval) in samples {
        write_embedding_file(&dir.join(&record.feature_refs.embeddings), &features.embeddings)?;
        write_keypoint_file(&dir.join(&record.feature_refs.keypoints), &features.frames.to_track())?;
        if let (Some(e), Some(p)) = (eval, &record.feature_refs.eval_embedding) {
            write_embedding_file(&dir.join(p), std::slice::from_ref(e))?;
        }
        records.push(record.clone());
    }
    Ok(DatasetManifest {
        samples: records,
        dictionary_ref: Some(PathBuf::from("..").join(layout::DICTIONARY)),
        metadata: [("generator".to_string(), "signagent-synth".to_string())].into(),
        base_dir: dir.to_path_buf(),
    })
}

pub fn write_fixture(root: &Path, fx: &SynthFixture) -> DataResult<()> {
    std::fs::create_dir_all(root).map_err(io(root))?;
    write_text(&root.join(layout::CONFIG), &(serde_json::to_string_pretty(&fx.config)? + "\n"))?;
    write_dictionary(&root.join(layout::DICTIONARY), &fx.dictionary)?;
    fx.bank.save(&root.join(layout::BANKS)).map_err(|e| DataError::InvalidSample(e.to_string()))?;
    let stop: Vec<&str> = fx.lemmas.stopwords.iter().map(String::as_str).collect();
    write_text(&root.join(layout::STOPWORDS), &(stop.join("\n") + "\n"))?;
    let lem: String = fx.lemmas.lemmas.iter().map(|(w, l)| format!("{w}\t{l}\n")).collect();
    write_text(&root.join(layout::LEMMAS), &lem)?;

    let t1 = root.join("task1");
    let mut m1 = write_samples(&t1, fx.sentences.iter().map(|s| (&s.record, &s.features, None)))?;
    m1.metadata.insert("sigma".into(), fx.config.sigma.to_string());
    write_manifest(&root.join(layout::TASK1_MANIFEST), &m1)?;
    let mut refs = String::new();
    for s in &fx.sentences {
        let line = ReferenceLine {
            sample_id: s.record.sample_id.clone(),
            subset: s.record.subset.clone(),
            reference: s.reference.clone(),
            gloss_ids: s.gloss_ids.clone(),
            segments: s.spans.clone(),
        };
        refs.push_str(&serde_json::to_string(&line)?);
        refs.push('\n');
    }
    write_text(&root.join(layout::TASK1_REFERENCES), &refs)?;

    let t2 = root.join("task2");
    let m2 = write_samples(
        &t2,
        fx.id_glosses.iter().flat_map(|g| g.samples.iter().map(|s| (&s.record, &s.features, Some(&s.eval_embedding)))),
    )?;
    write_manifest(&root.join(layout::TASK2_MANIFEST), &m2)?;
    let expected: BTreeMap<&str, ExpectedClusters> = fx
        .id_glosses
        .iter()
        .map(|g| {
            (
                g.gloss_id.as_str(),
                ExpectedClusters { expected_clusters: g.expected_clusters(), planted_singletons: g.planted() },
            )
        })
        .collect();
    write_text(&root.join(layout::TASK2_EXPECTED), &(serde_json::to_string_pretty(&expected)? + "\n"))
}

/// Reads a references file written by [`write_fixture`].
pub fn load_references(path: &Path) -> DataResult<Vec<ReferenceLine>> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| DataError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basetools::location::minor_offset;
    use crate::basetools::{gloss_retrieve, sign_lemma, DictionaryIndex};
    use crate::enhanced::evidence::predict_components;

    fn small() -> SynthConfig {
        SynthConfig { glosses: 12, sentences: 4, idgloss_glosses: 2, ..SynthConfig::default() }
    }

    #[test]
    fn noiseless_renders_classify_exactly() {
        let cfg = small();
        let fx = generate(&cfg).unwrap();
        for e in fx.dictionary.entries() {
            let f = render_sign(&e.canonical_phonology, hands_for(e.handedness), cfg.sign_frames, cfg.frame_rate);
            let preds = predict_components(&f, &fx.bank, 5, &MovementConfig::default()).unwrap();
            for (kind, label) in &e.canonical_phonology {
                let p = &preds[kind];
                assert_eq!(p.top(), Some(label.as_str()), "{} {kind}", e.gloss_id);
                assert_eq!(p.ranked[0].confidence, 1.0, "{} {kind}", e.gloss_id);
            }
        }
    }

    #[test]
    fn zero_sigma_retrieves_true_gloss() {
        let fx = generate(&small()).unwrap();
        let index = DictionaryIndex::new(&fx.dictionary).unwrap();
        for s in &fx.sentences {
            for (span, gid) in s.spans.iter().zip(&s.gloss_ids) {
                let q = &s.features.embeddings[span.start_frame];
                assert_eq!(&gloss_retrieve(q, &index, 1).unwrap()[0].gloss_id, gid);
            }
        }
    }

    #[test]
    fn sentences_lemmatise_to_reference_multiset() {
        let fx = generate(&small()).unwrap();
        for s in &fx.sentences {
            let mut t = sign_lemma(s.record.sentence.as_deref().unwrap(), &fx.lemmas);
            let mut r = s.reference.clone();
            t.sort();
            r.sort();
            assert_eq!(t, r);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_fixture(a.path(), &generate(&small()).unwrap()).unwrap();
        write_fixture(b.path(), &generate(&small()).unwrap()).unwrap();
        for rel in [
            layout::DICTIONARY,
            layout::BANKS,
            layout::TASK1_MANIFEST,
            layout::TASK1_REFERENCES,
            "task1/features/sent-000.emb",
            "task1/features/sent-000.kpt",
        ] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
        let m = crate::datamodel::load_manifest(&a.path().join(layout::TASK2_MANIFEST)).unwrap();
        assert_eq!(m.samples.len(), 2 * 9);
        assert!(m.dictionary_path().unwrap().exists());
    }

    #[test]
    fn plural_forms() {
        assert_eq!(plural("city"), "cities");
        assert_eq!(plural("day"), "days");
        assert_eq!(plural("bus"), "buses");
        assert_eq!(plural("church"), "churches");
        assert_eq!(plural("dog"), "dogs");
    }

    #[test]
    fn minor_targets_are_what_the_classifier_sees() {
        let p: Phonology = [
            (ComponentKind::Movement, "hold".to_string()),
            (ComponentKind::LocationMajor, "chest".to_string()),
            (ComponentKind::LocationMinor, "ipsilateral".to_string()),
        ]
        .into();
        for hands in [SignHands::Left, SignHands::Right] {
            let f = render_sign(&p, hands, 4, 25.0);
            assert_eq!(minor_offset(&f.body[0], hands.dominant()), minor_target("ipsilateral").to_vec());
        }
    }
}
