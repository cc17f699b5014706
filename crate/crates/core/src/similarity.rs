use thiserror::Error;

use crate::types::EmbeddingVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("embedding has no components")]
    Empty,
    #[error("embedding component {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    Degenerate,
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// The clamp keeps threshold comparisons (e.g. `>= 0.95`) away from values
/// like `1.0000000000000002` produced by rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::Degenerate);
    }
    Ok(cosine_with_norms(a.values(), na, b.values(), nb))
}

/// Inner loop for callers that cache norms. Both norms must be non-zero and
/// the slices must have equal length.
pub(crate) fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}
