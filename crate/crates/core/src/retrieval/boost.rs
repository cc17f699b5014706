use serde::{Deserialize, Serialize};

use crate::types::{sort_scored, ScoredChunk, Stage};

/// Multiply a candidate's score by `factor` when `metadata[key] == value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostRule {
    pub metadata_key: String,
    pub metadata_value: String,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    1.2
}

impl BoostRule {
    pub fn new(key: impl Into<String>, value: impl Into<String>, factor: f64) -> Self {
        Self {
            metadata_key: key.into(),
            metadata_value: value.into(),
            factor,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.factor.is_finite() && self.factor > 0.0
    }

    fn matches(&self, candidate: &ScoredChunk) -> bool {
        candidate.chunk.metadata.get(&self.metadata_key) == Some(&self.metadata_value)
    }
}

/// Rescale candidate scores by the product of all matching rule factors and
/// re-sort (descending score, ascending id).
pub fn apply_boost(candidates: Vec<ScoredChunk>, rules: &[BoostRule]) -> Vec<ScoredChunk> {
    let mut out: Vec<ScoredChunk> = candidates
        .into_iter()
        .map(|mut c| {
            let factor: f64 = rules
                .iter()
                .filter(|r| r.matches(&c))
                .map(|r| r.factor)
                .product();
            c.score *= factor;
            c.stage = Stage::Boosted;
            c
        })
        .collect();
    sort_scored(&mut out);
    out
}
