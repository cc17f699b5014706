//! In-memory hybrid index: brute-force cosine search, Okapi BM25, reciprocal
//! rank fusion and metadata boosting, all scoped to one partition at a time.
//!
//! Lexical statistics (document frequency, average length, corpus size) are
//! kept per partition, so mutating one partition never changes scores in
//! another.

mod boost;
mod fusion;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boost::{apply_boost, BoostRule};
pub use fusion::{rrf_fuse, RrfConfig};
pub use snapshot::SNAPSHOT_FORMAT;

use crate::similarity::{cosine_with_norms, VectorError};
use crate::text::tokenize;
use crate::types::{sort_scored, Chunk, EmbeddingVector, ScoredChunk, Stage};

/// Each retriever fetches this many times `top_k` before fusion.
pub const FANOUT: usize = 4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    chunk: Chunk,
    vector: EmbeddingVector,
    norm: f64,
    token_count: usize,
}

#[derive(Debug, Clone, Default)]
struct PartitionIndex {
    ids: BTreeSet<String>,
    /// token -> chunk id -> term frequency
    postings: HashMap<String, BTreeMap<String, u32>>,
    total_tokens: usize,
}

#[derive(Debug, Clone, Default)]
pub struct HybridIndex {
    dim: Option<usize>,
    bm25: Bm25Params,
    entries: BTreeMap<String, Entry>,
    partitions: BTreeMap<String, PartitionIndex>,
}

fn term_frequencies(text: &str) -> (BTreeMap<String, u32>, usize) {
    let tokens = tokenize(text);
    let mut tf = BTreeMap::new();
    for t in &tokens {
        *tf.entry(t.clone()).or_insert(0) += 1;
    }
    (tf, tokens.len())
}

impl HybridIndex {
    pub fn new(bm25: Bm25Params) -> Self {
        Self {
            bm25,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn bm25(&self) -> Bm25Params {
        self.bm25
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn partitions(&self) -> impl Iterator<Item = &str> {
        self.partitions.keys().map(String::as_str)
    }

    pub fn partition_len(&self, partition: &str) -> usize {
        self.partitions.get(partition).map_or(0, |p| p.ids.len())
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.entries.get(id).map(|e| &e.chunk)
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id).map(|e| &e.vector)
    }

    /// All chunks with their vectors, ordered by id.
    pub fn iter(&self) -> impl Iterator<Item = (&Chunk, &EmbeddingVector)> {
        self.entries.values().map(|e| (&e.chunk, &e.vector))
    }

    /// Insert or replace chunks. Every vector is validated before anything
    /// changes, so a failing batch leaves the index untouched.
    pub fn upsert_chunks(
        &mut self,
        items: Vec<(Chunk, EmbeddingVector)>,
    ) -> Result<usize, RetrievalError> {
        let mut dim = self.dim;
        for (_, v) in &items {
            let expected = *dim.get_or_insert(v.dim());
            if v.dim() != expected {
                return Err(VectorError::Dimension {
                    expected,
                    actual: v.dim(),
                }
                .into());
            }
            if v.is_zero() {
                return Err(VectorError::Degenerate.into());
            }
        }
        self.dim = dim;
        let n = items.len();
        for (chunk, vector) in items {
            self.remove(&chunk.id);
            let (tf, token_count) = term_frequencies(&chunk.content);
            let part = self
                .partitions
                .entry(chunk.partition_key.clone())
                .or_default();
            part.ids.insert(chunk.id.clone());
            part.total_tokens += token_count;
            for (token, count) in tf {
                part.postings
                    .entry(token)
                    .or_default()
                    .insert(chunk.id.clone(), count);
            }
            let norm = vector.norm();
            self.entries.insert(
                chunk.id.clone(),
                Entry {
                    chunk,
                    vector,
                    norm,
                    token_count,
                },
            );
        }
        Ok(n)
    }

    fn remove(&mut self, id: &str) -> bool {
        let Some(entry) = self.entries.remove(id) else {
            return false;
        };
        let key = &entry.chunk.partition_key;
        if let Some(part) = self.partitions.get_mut(key) {
            part.ids.remove(id);
            part.total_tokens -= entry.token_count;
            for token in tokenize(&entry.chunk.content) {
                if let Some(list) = part.postings.get_mut(&token) {
                    list.remove(id);
                    if list.is_empty() {
                        part.postings.remove(&token);
                    }
                }
            }
            if part.ids.is_empty() {
                self.partitions.remove(key);
            }
        }
        true
    }

    /// Remove every chunk of one partition. Unknown partitions remove nothing.
    pub fn delete_partition(&mut self, partition: &str) -> usize {
        let Some(part) = self.partitions.remove(partition) else {
            return 0;
        };
        for id in &part.ids {
            self.entries.remove(id);
        }
        part.ids.len()
    }

    /// Remove the chunks of one document within a partition.
    pub fn remove_document(&mut self, partition: &str, doc_id: &str) -> usize {
        let ids: Vec<String> = self
            .partitions
            .get(partition)
            .map(|p| {
                p.ids
                    .iter()
                    .filter(|id| self.entries[*id].chunk.doc_id == doc_id)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        ids.iter().filter(|id| self.remove(id)).count()
    }

    pub fn dense_search(
        &self,
        query: &EmbeddingVector,
        partition: &str,
        top_k: usize,
    ) -> Result<Vec<ScoredChunk>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let qnorm = query.norm();
        if qnorm == 0.0 {
            return Err(VectorError::Degenerate.into());
        }
        if let Some(dim) = self.dim {
            if dim != query.dim() {
                return Err(VectorError::Dimension {
                    expected: dim,
                    actual: query.dim(),
                }
                .into());
            }
        }
        let Some(part) = self.partitions.get(partition) else {
            return Ok(Vec::new());
        };
        let mut hits: Vec<ScoredChunk> = part
            .ids
            .iter()
            .map(|id| {
                let e = &self.entries[id];
                let s = cosine_with_norms(query.values(), qnorm, e.vector.values(), e.norm);
                ScoredChunk::new(e.chunk.clone(), s, Stage::Dense)
            })
            .collect();
        sort_scored(&mut hits);
        hits.truncate(top_k);
        Ok(hits)
    }

    /// Okapi BM25 over the partition, with `idf = ln(1 + (N - n + 0.5) / (n + 0.5))`.
    /// Repeated query terms count once. Chunks matching no term are omitted.
    pub fn sparse_search(
        &self,
        query: &str,
        partition: &str,
        top_k: usize,
    ) -> Result<Vec<ScoredChunk>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let Some(part) = self.partitions.get(partition) else {
            return Ok(Vec::new());
        };
        let n_docs = part.ids.len() as f64;
        let avg_len = part.total_tokens as f64 / n_docs;
        let Bm25Params { k1, b } = self.bm25;
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();

        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = part.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
            for (id, &tf) in list {
                let tf = f64::from(tf);
                let len = self.entries[id].token_count as f64;
                let norm = if avg_len > 0.0 { len / avg_len } else { 0.0 };
                let s = idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
                *scores.entry(id.as_str()).or_insert(0.0) += s;
            }
        }
        let mut hits: Vec<ScoredChunk> = scores
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(id, s)| ScoredChunk::new(self.entries[id].chunk.clone(), s, Stage::Sparse))
            .collect();
        sort_scored(&mut hits);
        hits.truncate(top_k);
        Ok(hits)
    }

    /// Dense and sparse retrieval (each `FANOUT * top_k` deep), fused with RRF,
    /// then boosted. Returns at most `top_k` chunks with stage `Boosted`.
    pub fn hybrid_search(
        &self,
        query_text: &str,
        query_vec: &EmbeddingVector,
        partition: &str,
        top_k: usize,
        rrf: RrfConfig,
        boosts: &[BoostRule],
    ) -> Result<Vec<ScoredChunk>, RetrievalError> {
        let breadth = top_k.saturating_mul(FANOUT);
        let dense = self.dense_search(query_vec, partition, breadth)?;
        let sparse = self.sparse_search(query_text, partition, breadth)?;
        let lists = [ids_of(&dense), ids_of(&sparse)];
        let fused = self.fused_chunks(&lists, rrf);
        let mut out = apply_boost(fused, boosts);
        out.truncate(top_k);
        Ok(out)
    }

    /// RRF over arbitrary ranked id lists, resolved to chunks (stage `Fused`).
    /// Ids no longer in the index are dropped.
    pub fn fused_chunks(&self, lists: &[Vec<String>], rrf: RrfConfig) -> Vec<ScoredChunk> {
        rrf_fuse(lists, rrf)
            .into_iter()
            .filter_map(|(id, s)| {
                self.entries
                    .get(&id)
                    .map(|e| ScoredChunk::new(e.chunk.clone(), s, Stage::Fused))
            })
            .collect()
    }
}

pub fn ids_of(list: &[ScoredChunk]) -> Vec<String> {
    list.iter().map(|s| s.chunk.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Metadata, Span};

    fn chunk(id: &str, partition: &str, content: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: format!("doc-{id}"),
            content: content.into(),
            heading_path: vec![],
            partition_key: partition.into(),
            metadata: Metadata::new(),
            char_span: Span::new(0, content.len()),
        }
    }

    fn vec2(x: f64, y: f64) -> EmbeddingVector {
        EmbeddingVector::new(vec![x, y]).unwrap()
    }

    fn fixture() -> HybridIndex {
        let mut idx = HybridIndex::default();
        idx.upsert_chunks(vec![
            (chunk("c1", "A", "alpha beta"), vec2(1.0, 0.0)),
            (chunk("c2", "A", "beta gamma"), vec2(0.0, 1.0)),
            (chunk("c3", "A", "gamma gamma delta"), vec2(1.0, 1.0)),
        ])
        .unwrap();
        idx
    }

    #[test]
    fn upsert_counts_and_replaces() {
        let mut idx = fixture();
        assert_eq!(idx.len(), 3);
        idx.upsert_chunks(vec![(chunk("c1", "A", "zeta"), vec2(1.0, 0.0))])
            .unwrap();
        assert_eq!(idx.len(), 3);
        assert!(idx.sparse_search("alpha", "A", 5).unwrap().is_empty());
        assert_eq!(idx.sparse_search("zeta", "A", 5).unwrap()[0].chunk.id, "c1");
    }

    #[test]
    fn upsert_same_id_twice() {
        let mut idx = HybridIndex::default();
        idx.upsert_chunks(vec![(chunk("x", "A", "a"), vec2(1.0, 0.0))])
            .unwrap();
        idx.upsert_chunks(vec![(chunk("x", "A", "a"), vec2(1.0, 0.0))])
            .unwrap();
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn dimension_is_fixed() {
        let mut idx = HybridIndex::default();
        idx.upsert_chunks(vec![(
            chunk("x", "A", "a"),
            EmbeddingVector::new(vec![1.0; 64]).unwrap(),
        )])
        .unwrap();
        let err = idx
            .upsert_chunks(vec![(
                chunk("y", "A", "b"),
                EmbeddingVector::new(vec![1.0; 32]).unwrap(),
            )])
            .unwrap_err();
        assert!(matches!(
            err,
            RetrievalError::Vector(VectorError::Dimension {
                expected: 64,
                actual: 32
            })
        ));
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn dense_self_match_first() {
        let idx = fixture();
        let hits = idx.dense_search(&vec2(0.0, 1.0), "A", 3).unwrap();
        assert_eq!(hits[0].chunk.id, "c2");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn dense_partition_isolation() {
        let idx = fixture();
        assert!(idx
            .dense_search(&vec2(1.0, 0.0), "B", 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn dense_rejects_zero_query() {
        let idx = fixture();
        assert!(matches!(
            idx.dense_search(&vec2(0.0, 0.0), "A", 3),
            Err(RetrievalError::Vector(VectorError::Degenerate))
        ));
    }

    #[test]
    fn sparse_no_match() {
        assert!(fixture().sparse_search("omega", "A", 3).unwrap().is_empty());
    }

    #[test]
    fn sparse_tf_monotone() {
        let hits = fixture().sparse_search("gamma", "A", 3).unwrap();
        assert_eq!(hits[0].chunk.id, "c3");
    }

    #[test]
    fn delete_partition_cases() {
        let mut idx = fixture();
        idx.upsert_chunks(vec![(chunk("b1", "B", "alpha"), vec2(1.0, 0.0))])
            .unwrap();
        let before = idx.dense_search(&vec2(1.0, 0.2), "B", 10).unwrap();
        assert_eq!(idx.delete_partition("A"), 3);
        assert_eq!(idx.dense_search(&vec2(1.0, 0.2), "B", 10).unwrap(), before);
        assert_eq!(idx.delete_partition("Z"), 0);
        assert_eq!(idx.delete_partition("B"), 1);
        assert!(idx.is_empty());
    }

    #[test]
    fn remove_document_only_touches_that_doc() {
        let mut idx = fixture();
        assert_eq!(idx.remove_document("A", "doc-c1"), 1);
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.remove_document("B", "doc-c2"), 0);
    }

    #[test]
    fn hybrid_empty_index() {
        let idx = HybridIndex::default();
        let out = idx
            .hybrid_search("x", &vec2(1.0, 0.0), "A", 5, RrfConfig::default(), &[])
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn top_k_zero_rejected() {
        assert!(matches!(
            fixture().sparse_search("a", "A", 0),
            Err(RetrievalError::InvalidTopK)
        ));
    }
}
