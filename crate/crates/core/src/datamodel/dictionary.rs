//! Lexical dictionary entries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::load_embedding_file;
use super::embedding::Embedding;
use super::error::{DataError, DataResult};
use super::phonology::Phonology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Handedness {
    OneHanded,
    TwoHanded,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub gloss_id: String,
    #[serde(default)]
    pub canonical_phonology: Phonology,
    pub reference_embedding: Embedding,
    #[serde(default)]
    pub handedness: Handedness,
    /// Relative corpus frequency, used as a ranking prior. Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
}

impl DictionaryEntry {
    /// The written word a gloss stands for: lowercase, variant suffix (`-2`) dropped.
    pub fn gloss_word(&self) -> String {
        gloss_word(&self.gloss_id)
    }
}

pub fn gloss_word(gloss_id: &str) -> String {
    let lower = gloss_id.to_lowercase();
    match lower.rsplit_once('-') {
        Some((head, tail)) if !head.is_empty() && !tail.is_empty() && tail.chars().all(|c| c.is_ascii_digit()) => {
            head.to_string()
        }
        _ => lower,
    }
}

/// On-disk form: the reference embedding may be inline or point into an embedding file.
#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingSource {
    Inline(Vec<f32>),
    File { file: PathBuf, index: usize },
}

#[derive(Deserialize)]
struct RawEntry {
    gloss_id: String,
    #[serde(default)]
    canonical_phonology: Phonology,
    reference_embedding: EmbeddingSource,
    #[serde(default)]
    handedness: Handedness,
    #[serde(default)]
    frequency: Option<f64>,
}

/// Validated dictionary with id lookup; immutable after load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dictionary {
    entries: Vec<DictionaryEntry>,
    by_id: BTreeMap<String, usize>,
}

impl Dictionary {
    pub fn new(entries: Vec<DictionaryEntry>) -> DataResult<Self> {
        let mut by_id = BTreeMap::new();
        let mut dim = None;
        for (i, e) in entries.iter().enumerate() {
            if e.gloss_id.is_empty() {
                return Err(DataError::InvalidSample("empty gloss_id".into()));
            }
            if by_id.insert(e.gloss_id.clone(), i).is_some() {
                return Err(DataError::DuplicateGloss(e.gloss_id.clone()));
            }
            for (kind, label) in &e.canonical_phonology {
                if !kind.is_valid_label(label) {
                    return Err(DataError::UnknownComponentLabel {
                        gloss_id: e.gloss_id.clone(),
                        kind: kind.to_string(),
                        label: label.clone(),
                    });
                }
            }
            match dim {
                None => dim = Some(e.reference_embedding.dim()),
                Some(d) if d != e.reference_embedding.dim() => {
                    return Err(DataError::InvalidEmbedding(format!(
                        "entry `{}` has dimension {}, expected {d}",
                        e.gloss_id,
                        e.reference_embedding.dim()
                    )))
                }
                _ => {}
            }
            if let Some(f) = e.frequency {
                if !(f.is_finite() && f >= 0.0) {
                    return Err(DataError::InvalidSample(format!("entry `{}`: bad frequency", e.gloss_id)));
                }
            }
        }
        Ok(Dictionary { entries, by_id })
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn get(&self, gloss_id: &str) -> Option<&DictionaryEntry> {
        self.by_id.get(gloss_id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.reference_embedding.dim())
    }

    /// Glosses whose written word equals `word`, in gloss_id order.
    pub fn glosses_for_word(&self, word: &str) -> Vec<&DictionaryEntry> {
        self.by_id.values().map(|&i| &self.entries[i]).filter(|e| e.gloss_word() == word).collect()
    }

    pub fn words(&self) -> BTreeSet<String> {
        self.entries.iter().map(DictionaryEntry::gloss_word).collect()
    }

    /// Frequency prior normalised to `[0, 1]` by the largest frequency.
    pub fn frequency_prior(&self, gloss_id: &str) -> f64 {
        let max = self.entries.iter().map(|e| e.frequency.unwrap_or(1.0)).fold(0.0f64, f64::max);
        match self.get(gloss_id) {
            Some(e) if max > 0.0 => e.frequency.unwrap_or(1.0) / max,
            _ => 0.0,
        }
    }
}

pub fn load_dictionary(path: &Path) -> DataResult<Dictionary> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::MissingDictionary(path.to_path_buf()),
        _ => DataError::io(path, e),
    })?;
    let raw: Vec<RawEntry> = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut files: BTreeMap<PathBuf, Vec<Embedding>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(raw.len());
    for r in raw {
        let reference_embedding = match r.reference_embedding {
            EmbeddingSource::Inline(v) => {
                Embedding::new(v).map_err(|e| DataError::InvalidEmbedding(format!("`{}`: {e}", r.gloss_id)))?
            }
            EmbeddingSource::File { file, index } => {
                let full = if file.is_absolute() { file } else { base.join(file) };
                if !files.contains_key(&full) {
                    let loaded = load_embedding_file(&full)?;
                    files.insert(full.clone(), loaded);
                }
                files[&full].get(index).cloned().ok_or_else(|| {
                    DataError::InvalidEmbedding(format!("`{}`: index {index} out of range", r.gloss_id))
                })?
            }
        };
        entries.push(DictionaryEntry {
            gloss_id: r.gloss_id,
            canonical_phonology: r.canonical_phonology,
            reference_embedding,
            handedness: r.handedness,
            frequency: r.frequency,
        });
    }
    Dictionary::new(entries)
}

pub fn write_dictionary(path: &Path, dictionary: &Dictionary) -> DataResult<()> {
    let text = serde_json::to_string_pretty(dictionary.entries())?;
    std::fs::write(path, text + "\n").map_err(|e| DataError::io(path, e))
}
