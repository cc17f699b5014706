//! Embedding-similarity answer cache with TTL and uncertainty-aware thresholds.
//!
//! A lookup hits when the best live entry in the same partition reaches the
//! threshold. Queries carrying an uncertainty marker ("maybe", "possibly", ...)
//! must clear the stricter fuzzy threshold.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::similarity::{cosine_with_norms, VectorError};
use crate::text::tokenize;
use crate::types::{EmbeddingVector, RouteDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub default_threshold: f64,
    pub fuzzy_threshold: f64,
    pub default_ttl_seconds: u64,
    pub max_entries: usize,
    pub fuzzy_markers: Vec<String>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            default_threshold: 0.95,
            fuzzy_threshold: 0.98,
            default_ttl_seconds: 168 * 3600,
            max_entries: 10_000,
            fuzzy_markers: ["maybe", "possibly", "perhaps", "might", "not sure"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = 0.0 < self.default_threshold
            && self.default_threshold <= self.fuzzy_threshold
            && self.fuzzy_threshold <= 1.0;
        if !ok {
            return Err(format!(
                "cache thresholds must satisfy 0 < default ({}) <= fuzzy ({}) <= 1",
                self.default_threshold, self.fuzzy_threshold
            ));
        }
        if self.default_ttl_seconds == 0 {
            return Err("cache ttl must be positive".into());
        }
        if self.max_entries == 0 {
            return Err("cache max_entries must be positive".into());
        }
        Ok(())
    }
}

/// True if any marker occurs as a whole token sequence in the query.
/// Multi-word markers such as "not sure" must appear as consecutive tokens.
pub fn is_fuzzy(query: &str, cfg: &CacheConfig) -> bool {
    let tokens = tokenize(query);
    cfg.fuzzy_markers.iter().any(|m| {
        let marker = tokenize(m);
        !marker.is_empty() && tokens.windows(marker.len()).any(|w| w == marker.as_slice())
    })
}

/// A cited source: chunk id or web url, with the score it was cited at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: String,
    pub score: f64,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Chunk,
    Web,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub partition_key: String,
    pub query_text: String,
    pub query_vec: EmbeddingVector,
    pub answer: String,
    pub sources: Vec<Source>,
    pub route: RouteDecision,
    pub created_at: u64,
    pub ttl_seconds: u64,
}

impl CacheEntry {
    fn is_live(&self, now: u64) -> bool {
        now.saturating_sub(self.created_at) < self.ttl_seconds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit {
    pub answer: String,
    pub sources: Vec<Source>,
    pub route: RouteDecision,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
    pub inserts: u64,
}

#[derive(Debug)]
struct Stored {
    entry: CacheEntry,
    norm: f64,
}

#[derive(Debug, Default)]
struct Inner {
    dim: Option<usize>,
    /// Keyed by (created_at, insertion sequence): first key is the eviction victim.
    entries: BTreeMap<(u64, u64), Stored>,
    seq: u64,
}

#[derive(Debug)]
pub struct SemanticCache {
    cfg: CacheConfig,
    inner: RwLock<Inner>,
    lookups: AtomicU64,
    hits: AtomicU64,
    inserts: AtomicU64,
}

impl SemanticCache {
    pub fn new(cfg: CacheConfig) -> Self {
        Self {
            cfg,
            inner: RwLock::new(Inner::default()),
            lookups: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            inserts: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            lookups: self.lookups.load(Ordering::Relaxed),
            hits: self.hits.load(Ordering::Relaxed),
            inserts: self.inserts.load(Ordering::Relaxed),
        }
    }

    pub fn threshold_for(&self, query_text: &str) -> f64 {
        if is_fuzzy(query_text, &self.cfg) {
            self.cfg.fuzzy_threshold
        } else {
            self.cfg.default_threshold
        }
    }

    pub fn lookup(
        &self,
        partition: &str,
        query_text: &str,
        query_vec: &EmbeddingVector,
        now: u64,
    ) -> Result<Option<CacheHit>, VectorError> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let threshold = self.threshold_for(query_text);
        let hit = self
            .best_match(partition, query_vec, now)?
            .filter(|h| h.similarity >= threshold);
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(hit)
    }

    /// Most similar live entry regardless of threshold. Ties go to the most
    /// recently created entry.
    pub fn best_match(
        &self,
        partition: &str,
        query_vec: &EmbeddingVector,
        now: u64,
    ) -> Result<Option<CacheHit>, VectorError> {
        let qnorm = query_vec.norm();
        if qnorm == 0.0 {
            return Err(VectorError::Degenerate);
        }
        let inner = self.inner.read();
        if let Some(dim) = inner.dim {
            if dim != query_vec.dim() {
                return Err(VectorError::Dimension {
                    expected: dim,
                    actual: query_vec.dim(),
                });
            }
        }
        let mut best: Option<(&CacheEntry, f64)> = None;
        for stored in inner.entries.values().rev() {
            let e = &stored.entry;
            if e.partition_key != partition || !e.is_live(now) {
                continue;
            }
            let s = cosine_with_norms(query_vec.values(), qnorm, e.query_vec.values(), stored.norm);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e, s));
            }
        }
        Ok(best.map(|(e, similarity)| CacheHit {
            answer: e.answer.clone(),
            sources: e.sources.clone(),
            route: e.route,
            similarity,
        }))
    }

    /// Store an entry, evicting the oldest ones past `max_entries`.
    pub fn insert(&self, entry: CacheEntry) -> Result<(), VectorError> {
        let norm = entry.query_vec.norm();
        if norm == 0.0 {
            return Err(VectorError::Degenerate);
        }
        let mut inner = self.inner.write();
        let dim = *inner.dim.get_or_insert(entry.query_vec.dim());
        if dim != entry.query_vec.dim() {
            return Err(VectorError::Dimension {
                expected: dim,
                actual: entry.query_vec.dim(),
            });
        }
        let seq = inner.seq;
        inner.seq += 1;
        let mut entry = entry;
        if entry.ttl_seconds == 0 {
            entry.ttl_seconds = self.cfg.default_ttl_seconds;
        }
        inner
            .entries
            .insert((entry.created_at, seq), Stored { entry, norm });
        while inner.entries.len() > self.cfg.max_entries {
            inner.entries.pop_first();
        }
        self.inserts.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Drop every entry whose age has reached its TTL.
    pub fn purge_expired(&self, now: u64) -> usize {
        let mut inner = self.inner.write();
        let before = inner.entries.len();
        inner.entries.retain(|_, s| s.entry.is_live(now));
        before - inner.entries.len()
    }
}
