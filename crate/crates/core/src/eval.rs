//! Self-retrieval comparison of embedding search against the keyword baseline.
//!
//! Each record's own document text is used as the query; a method scores a
//! hit at rank r with reciprocal rank 1/r (0 if the record is not returned).
//! Equal scores are ordered by ascending PMID in both methods, so a record
//! tied with a lower PMID can land below rank 1; such queries are counted in
//! [`MethodScores::tied_queries`].

use serde::{Deserialize, Serialize};

use crate::corpus::PublicationRecord;
use crate::embedding::{document_text, Embedder, EmbeddingError};
use crate::index::ScoredDocument;
use crate::pipeline::Snapshot;
use crate::recommend::KeywordBaseline;

pub const TIE_RULE: &str = "equal scores are ordered by ascending pmid";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub top1_hits: usize,
    pub top1_rate: f64,
    pub mrr: f64,
    /// Queries where another record scored exactly the same as the target.
    pub tied_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    /// Query records absent from the index; they count as misses.
    pub not_indexed: usize,
    pub embedding: MethodScores,
    pub keyword: MethodScores,
    pub tie_rule: String,
}

#[derive(Default)]
struct Tally {
    hits: usize,
    rr_sum: f64,
    tied: usize,
}

impl Tally {
    fn record(&mut self, pmid: &str, ranking: &[ScoredDocument]) {
        let Some(pos) = ranking.iter().position(|d| d.pmid == pmid) else {
            return;
        };
        let target = ranking[pos].score;
        if ranking.iter().filter(|d| d.score == target).count() > 1 {
            self.tied += 1;
        }
        if pos == 0 {
            self.hits += 1;
        }
        self.rr_sum += 1.0 / ranking[pos].rank as f64;
    }

    fn finish(self, queries: usize) -> MethodScores {
        let n = queries.max(1) as f64;
        MethodScores {
            top1_hits: self.hits,
            top1_rate: if queries == 0 {
                0.0
            } else {
                self.hits as f64 / n
            },
            mrr: if queries == 0 { 0.0 } else { self.rr_sum / n },
            tied_queries: self.tied,
        }
    }
}

/// Runs every record in `queries` as a self-text query against `snapshot`.
pub async fn evaluate(
    queries: &[PublicationRecord],
    snapshot: &Snapshot,
    embedder: &dyn Embedder,
) -> Result<EvalReport, EmbeddingError> {
    let texts: Vec<String> = queries.iter().map(document_text).collect();
    let vectors = embedder.embed_texts(&texts).await?;
    let n = snapshot.index.len().max(1);
    let keyword = KeywordBaseline::new(&snapshot.store);

    let mut emb = Tally::default();
    let mut kw = Tally::default();
    let mut not_indexed = 0;
    for ((record, text), vector) in queries.iter().zip(&texts).zip(&vectors) {
        if !snapshot.index.contains(&record.pmid) {
            not_indexed += 1;
        }
        let ranking = snapshot.index.top_k(vector, n).map_err(|e| match e {
            crate::index::IndexError::DimensionMismatch { expected, got } => {
                EmbeddingError::DimensionMismatch { expected, got }
            }
            other => EmbeddingError::Protocol(other.to_string()),
        })?;
        emb.record(&record.pmid, &ranking);
        kw.record(&record.pmid, &keyword.search(text, n));
    }
    Ok(EvalReport {
        queries: queries.len(),
        not_indexed,
        embedding: emb.finish(queries.len()),
        keyword: kw.finish(queries.len()),
        tie_rule: TIE_RULE.to_string(),
    })
}
