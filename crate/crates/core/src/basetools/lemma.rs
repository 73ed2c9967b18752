//! Rule-based sentence normalisation into pseudo-gloss tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::ToolResult;
use crate::datamodel::DataError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LemmaTable {
    pub lemmas: BTreeMap<String, String>,
    pub stopwords: BTreeSet<String>,
    pub vocabulary: Option<BTreeSet<String>>,
}

fn clean(word: &str) -> String {
    word.chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
}

fn split(text: &str) -> Vec<String> {
    clean(text).split_whitespace().map(|w| w.trim_matches('-').to_string()).filter(|w| !w.is_empty()).collect()
}

impl LemmaTable {
    pub fn new(lemmas: BTreeMap<String, String>, stopwords: BTreeSet<String>) -> Self {
        LemmaTable {
            lemmas: lemmas.into_iter().map(|(k, v)| (k.to_lowercase(), v.to_lowercase())).collect(),
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            vocabulary: None,
        }
    }

    pub fn with_vocabulary(mut self, vocabulary: BTreeSet<String>) -> Self {
        self.vocabulary = Some(vocabulary.into_iter().map(|w| w.to_lowercase()).collect());
        self
    }

    /// Follows the lemma map to a fixed point, stopping on cycles.
    fn lemma(&self, word: &str) -> String {
        let mut cur = word.to_string();
        let mut seen = BTreeSet::new();
        while let Some(next) = self.lemmas.get(&cur) {
            if !seen.insert(cur.clone()) || *next == cur {
                break;
            }
            cur = next.clone();
        }
        cur
    }

    /// Reads a stopword list (one per line, `#` comments) and a two-column
    /// TSV lemma table.
    pub fn load(stopwords: Option<&Path>, lemmas: Option<&Path>) -> ToolResult<Self> {
        let mut stop = BTreeSet::new();
        if let Some(p) = stopwords {
            let text = std::fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
            stop.extend(
                text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string),
            );
        }
        let mut map = BTreeMap::new();
        if let Some(p) = lemmas {
            let text = std::fs::read_to_string(p).map_err(|e| DataError::io(p, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut cols = line.split('\t');
                match (cols.next(), cols.next()) {
                    (Some(w), Some(l)) => {
                        map.insert(w.trim().to_string(), l.trim().to_string());
                    }
                    _ => {
                        return Err(DataError::Parse {
                            line: i + 1,
                            message: "expected two tab-separated columns".into(),
                        }
                        .into())
                    }
                }
            }
        }
        Ok(LemmaTable::new(map, stop))
    }
}

/// Lowercase, strip punctuation, drop stopwords, lemmatise and optionally keep
/// only vocabulary words. Order and multiplicity are preserved.
pub fn sign_lemma(sentence: &str, table: &LemmaTable) -> Vec<String> {
    split(sentence)
        .into_iter()
        .filter(|w| !table.stopwords.contains(w))
        .flat_map(|w| split(&table.lemma(&w)))
        .filter(|w| !table.stopwords.contains(w))
        .filter(|w| table.vocabulary.as_ref().is_none_or(|v| v.contains(w)))
        .collect()
}
