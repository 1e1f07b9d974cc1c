//! Exact cosine top-K over unit vectors keyed by PMID.

mod persist;

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, l2_norm, EmbeddingVector};

pub use persist::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt index ({field}): {detail}")]
    Corrupt { field: &'static str, detail: String },
    #[error("index io error: {0}")]
    Io(#[from] std::io::Error),
}

impl IndexError {
    pub(crate) fn corrupt(field: &'static str, detail: impl Into<String>) -> Self {
        Self::Corrupt {
            field,
            detail: detail.into(),
        }
    }
}

/// `(a . b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(IndexError::NonFinite);
    }
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        return Err(IndexError::ZeroNorm);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub pmid: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Result order: higher score first, ties by ascending PMID.
pub fn rank_order(a_score: f64, a_pmid: &str, b_score: f64, b_pmid: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_pmid.cmp(b_pmid))
}

/// Sorts `(pmid, score)` pairs into result order, keeps the best `k` and
/// assigns ranks.
pub fn rank_scores(mut scored: Vec<(String, f64)>, k: usize) -> Vec<ScoredDocument> {
    let cmp = |a: &(String, f64), b: &(String, f64)| rank_order(a.1, &a.0, b.1, &b.0);
    if k < scored.len() {
        if k > 0 {
            scored.select_nth_unstable_by(k - 1, cmp);
        }
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (pmid, score))| ScoredDocument {
            pmid,
            score,
            rank: i + 1,
        })
        .collect()
}

/// In-memory vector index. Entries keep insertion order; re-adding a PMID
/// replaces its vector in place.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<(String, EmbeddingVector)>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, pmid: &str) -> bool {
        self.positions.contains_key(pmid)
    }

    pub fn get(&self, pmid: &str) -> Option<&EmbeddingVector> {
        self.positions.get(pmid).map(|&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(p, v)| (p.as_str(), v))
    }

    pub fn add(
        &mut self,
        pmid: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        let pmid = pmid.into();
        match self.positions.get(&pmid) {
            Some(&i) => self.entries[i].1 = vector,
            None => {
                self.positions.insert(pmid.clone(), self.entries.len());
                self.entries.push((pmid, vector));
            }
        }
        Ok(())
    }

    /// The `min(k, len)` best matches for `query`, by exhaustive scan.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredDocument>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let scored = self
            .entries
            .iter()
            .map(|(pmid, v)| (pmid.clone(), query.dot(v).clamp(-1.0, 1.0)))
            .collect();
        Ok(rank_scores(scored, k))
    }
}
