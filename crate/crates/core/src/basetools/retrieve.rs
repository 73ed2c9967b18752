//! Nearest-neighbour lookup of dictionary reference embeddings.

use serde::{Deserialize, Serialize};

use super::{BaseToolError, ToolResult};
use crate::datamodel::embedding::dot;
use crate::datamodel::{Dictionary, Embedding, EmbeddingError};

/// Unit-normalised reference embeddings, sorted by gloss_id.
#[derive(Debug, Clone)]
pub struct DictionaryIndex {
    ids: Vec<String>,
    units: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualMatch {
    pub gloss_id: String,
    pub visual_similarity: f64,
}

impl DictionaryIndex {
    pub fn new(dictionary: &Dictionary) -> ToolResult<Self> {
        let mut entries: Vec<_> = dictionary.entries().iter().collect();
        entries.sort_by(|a, b| a.gloss_id.cmp(&b.gloss_id));
        let dim = dictionary.dim().unwrap_or(0);
        let mut ids = Vec::with_capacity(entries.len());
        let mut units = Vec::with_capacity(entries.len());
        for e in entries {
            ids.push(e.gloss_id.clone());
            units.push(e.reference_embedding.unit()?);
        }
        Ok(DictionaryIndex { ids, units, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every entry, most similar first.
    pub fn rank_all(&self, query: &Embedding) -> ToolResult<Vec<VisualMatch>> {
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, got: query.dim() }.into());
        }
        let q = query.unit()?;
        let mut out: Vec<VisualMatch> = self
            .ids
            .iter()
            .zip(&self.units)
            .map(|(id, u)| VisualMatch { gloss_id: id.clone(), visual_similarity: dot(&q, u).clamp(-1.0, 1.0) })
            .collect();
        // stable sort keeps gloss_id order among equal similarities
        out.sort_by(|a, b| b.visual_similarity.total_cmp(&a.visual_similarity));
        Ok(out)
    }
}

pub fn gloss_retrieve(query: &Embedding, index: &DictionaryIndex, k: usize) -> ToolResult<Vec<VisualMatch>> {
    if k == 0 {
        return Err(BaseToolError::InvalidK);
    }
    let mut all = index.rank_all(query)?;
    all.truncate(k);
    Ok(all)
}
