//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::similarity::VectorError;

/// Free-form string metadata attached to documents and chunks.
///
/// Ordered so that snapshots serialize deterministically.
pub type Metadata = BTreeMap<String, String>;

/// A source document before splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_path: String,
    /// Markdown body. Front matter, if any, has already been stripped.
    pub content: String,
    pub metadata: Metadata,
    pub partition_key: String,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        content: impl Into<String>,
        partition_key: impl Into<String>,
    ) -> Self {
        let id = id.into();
        Self {
            source_path: id.clone(),
            id,
            content: content.into(),
            metadata: Metadata::new(),
            partition_key: partition_key.into(),
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

/// Half-open byte range `[start, end)` into a document's content.
///
/// Offsets always fall on UTF-8 character boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True if `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// True if the two spans share at least one byte.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// The atomic retrieval unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub content: String,
    /// Enclosing H1..H3 heading texts, outermost first.
    pub heading_path: Vec<String>,
    pub partition_key: String,
    pub metadata: Metadata,
    pub char_span: Span,
}

/// The pipeline stage that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Dense,
    Sparse,
    Fused,
    Boosted,
    Reranked,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Dense => "dense",
            Stage::Sparse => "sparse",
            Stage::Fused => "fused",
            Stage::Boosted => "boosted",
            Stage::Reranked => "reranked",
        })
    }
}

/// A chunk paired with the score assigned at some stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
    pub stage: Stage,
}

impl ScoredChunk {
    pub fn new(chunk: Chunk, score: f64, stage: Stage) -> Self {
        debug_assert!(score.is_finite(), "non-finite score {score}");
        Self {
            chunk,
            score,
            stage,
        }
    }
}

/// Sort descending by score, breaking ties by ascending chunk id.
pub fn sort_scored(items: &mut [ScoredChunk]) {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.chunk.id.cmp(&b.chunk.id))
    });
}

/// A dense embedding. Construction guarantees every component is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index: i });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, VectorError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Adaptive routing outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteDecision {
    /// Factual lookups: direct hybrid search, no query rewriting.
    Simple,
    /// Rewrite, decompose, and HyDE before retrieval.
    Complex,
    /// Web search only; the internal index is not consulted.
    External,
}

impl fmt::Display for RouteDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteDecision::Simple => "simple",
            RouteDecision::Complex => "complex",
            RouteDecision::External => "external",
        })
    }
}

/// Retrieval-quality verdict from the corrective evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CragVerdict {
    Correct,
    Incorrect,
    Ambiguous,
}

impl fmt::Display for CragVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CragVerdict::Correct => "correct",
            CragVerdict::Incorrect => "incorrect",
            CragVerdict::Ambiguous => "ambiguous",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(VectorError::NonFinite { index: 1 })
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![]),
            Err(VectorError::Empty)
        ));
    }

    #[test]
    fn embedding_serde_validates() {
        let v: Result<EmbeddingVector, _> = serde_json::from_str("[]");
        assert!(v.is_err());
        let v: EmbeddingVector = serde_json::from_str("[0.5, 0.25]").unwrap();
        assert_eq!(v.dim(), 2);
    }

    #[test]
    fn sort_breaks_ties_by_id() {
        let mk = |id: &str, s: f64| ScoredChunk {
            chunk: Chunk {
                id: id.into(),
                doc_id: "d".into(),
                content: "x".into(),
                heading_path: vec![],
                partition_key: "p".into(),
                metadata: Metadata::new(),
                char_span: Span::new(0, 1),
            },
            score: s,
            stage: Stage::Dense,
        };
        let mut v = vec![mk("b", 0.5), mk("a", 0.5), mk("c", 0.9)];
        sort_scored(&mut v);
        let ids: Vec<_> = v.iter().map(|s| s.chunk.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn span_relations() {
        let outer = Span::new(0, 10);
        assert!(outer.contains(&Span::new(2, 10)));
        assert!(!outer.contains(&Span::new(5, 11)));
        assert!(outer.overlaps(&Span::new(9, 12)));
        assert!(!outer.overlaps(&Span::new(10, 12)));
    }
}
