//! Fixed-dimension embedding vectors and cosine geometry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("embedding must have positive dimension")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A finite real vector stored in single precision, as on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Embedding(values))
    }

    /// Builds from double precision values, rounding to `f32`.
    pub fn from_f64(values: &[f64]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Unit-length copy in double precision.
    pub fn unit(&self) -> Result<Vec<f64>, EmbeddingError> {
        unit_vector(&self.to_f64())
    }

    pub fn cosine_similarity(&self, other: &Embedding) -> Result<f64, EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let a = self.unit()?;
        let b = other.unit()?;
        Ok(dot(&a, &b).clamp(-1.0, 1.0))
    }

    /// Element-wise mean of a non-empty set of same-dimension embeddings.
    pub fn mean<'a, I>(items: I) -> Result<Embedding, EmbeddingError>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut acc: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for e in items {
            if n == 0 {
                acc = vec![0.0; e.dim()];
            } else if e.dim() != acc.len() {
                return Err(EmbeddingError::DimensionMismatch { expected: acc.len(), got: e.dim() });
            }
            for (a, &v) in acc.iter_mut().zip(&e.0) {
                *a += v as f64;
            }
            n += 1;
        }
        if n == 0 {
            return Err(EmbeddingError::Empty);
        }
        Embedding::from_f64(&acc.iter().map(|v| v / n as f64).collect::<Vec<_>>())
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(value: Vec<f32>) -> Result<Self, Self::Error> {
        Embedding::new(value)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(value: Embedding) -> Self {
        value.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn unit_vector(v: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
    let n = l2_norm(v);
    if n == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine distance `1 - cos(a, b)` between two non-zero vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(1.0 - (dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(Embedding::new(vec![]), Err(EmbeddingError::Empty));
        assert_eq!(Embedding::new(vec![1.0, f32::NAN]), Err(EmbeddingError::NonFinite(1)));
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let z = Embedding::new(vec![0.0, 0.0]).unwrap();
        let e = Embedding::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(e.cosine_similarity(&z), Err(EmbeddingError::ZeroVector));
        assert_eq!(e.cosine_similarity(&e).unwrap(), 1.0);
    }

    #[test]
    fn serde_validates_entries() {
        let e: Embedding = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(e.dim(), 2);
        assert!(serde_json::from_str::<Embedding>("[]").is_err());
    }

    #[test]
    fn mean_of_embeddings() {
        let a = Embedding::new(vec![1.0, 0.0]).unwrap();
        let b = Embedding::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(Embedding::mean([&a, &b]).unwrap().as_slice(), &[0.5, 0.5]);
    }
}
