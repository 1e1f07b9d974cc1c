//! Collaborator recommendations.
//!
//! Two independent channels: [`aggregate_collaborators`] ranks authors by the
//! summed similarity of their retrieved publications, and [`LlmClient`]
//! passes the assembled prompt to a local chat-completions server and returns
//! its text untouched. [`keyword_baseline`] is the lexical retrieval used to
//! compare against embedding search.

mod llm;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, PublicationRecord};
use crate::index::{rank_order, rank_scores, ScoredDocument};

pub use llm::{GenerationResult, LlmClient, LlmConfig, LlmError};

pub const MAX_TOPIC_TERMS: usize = 5;
pub const MIN_KEYWORD_TOKEN_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportingDoc {
    pub pmid: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaboratorRecommendation {
    pub canonical_key: String,
    pub display_name: String,
    pub aggregate_score: f64,
    /// In result order (score descending, PMID ascending).
    pub supporting_pmids: Vec<SupportingDoc>,
    pub topic_terms: Vec<String>,
}

/// Ranks authors by `sum(score)` over the retrieved publications they
/// (co-)authored.
///
/// Publications with a non-positive score carry no evidence and are skipped,
/// and an author listed twice on one publication counts once. Sums are
/// accumulated in result order so the output does not depend on the order of
/// `ranked`. The display name comes from the author's best-ranked
/// publication. Topic terms are the author's most frequent keywords
/// (lowercased), ties broken alphabetically.
pub fn aggregate_collaborators(
    ranked: &[(ScoredDocument, &PublicationRecord)],
    max_authors: usize,
) -> Vec<CollaboratorRecommendation> {
    let mut docs: Vec<&(ScoredDocument, &PublicationRecord)> =
        ranked.iter().filter(|(d, _)| d.score > 0.0).collect();
    docs.sort_by(|a, b| rank_order(a.0.score, &a.0.pmid, b.0.score, &b.0.pmid));

    let mut by_author: BTreeMap<&str, CollaboratorRecommendation> = BTreeMap::new();
    let mut keyword_counts: HashMap<&str, BTreeMap<String, usize>> = HashMap::new();
    for (doc, record) in docs {
        let mut seen = BTreeSet::new();
        for author in &record.authors {
            let key = author.canonical_key.as_str();
            if key.is_empty() || !seen.insert(key) {
                continue;
            }
            let entry = by_author
                .entry(key)
                .or_insert_with(|| CollaboratorRecommendation {
                    canonical_key: key.to_string(),
                    display_name: author.display_name.clone(),
                    aggregate_score: 0.0,
                    supporting_pmids: Vec::new(),
                    topic_terms: Vec::new(),
                });
            entry.aggregate_score += doc.score;
            entry.supporting_pmids.push(SupportingDoc {
                pmid: doc.pmid.clone(),
                score: doc.score,
            });
            let counts = keyword_counts.entry(key).or_default();
            let keywords: BTreeSet<String> = record
                .keywords
                .iter()
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            for keyword in keywords {
                *counts.entry(keyword).or_default() += 1;
            }
        }
    }

    let mut out: Vec<CollaboratorRecommendation> = by_author
        .into_iter()
        .map(|(key, mut rec)| {
            if let Some(counts) = keyword_counts.remove(key) {
                let mut terms: Vec<(String, usize)> = counts.into_iter().collect();
                terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                rec.topic_terms = terms
                    .into_iter()
                    .take(MAX_TOPIC_TERMS)
                    .map(|(t, _)| t)
                    .collect();
            }
            rec
        })
        .collect();
    out.sort_by(|a, b| {
        rank_order(
            a.aggregate_score,
            &a.canonical_key,
            b.aggregate_score,
            &b.canonical_key,
        )
    });
    out.truncate(max_authors);
    out
}

/// Lowercased tokens of at least three characters, split on
/// non-alphanumerics.
pub fn keyword_tokens(text: &str) -> BTreeSet<String> {
    crate::embedding::tokenize(text)
        .filter(|t| t.chars().count() >= MIN_KEYWORD_TOKEN_CHARS)
        .collect()
}

/// Lexical baseline: the fraction of distinct query tokens found in a
/// record's title and abstract. Records scoring zero are left out.
pub fn keyword_baseline(query: &str, store: &CorpusStore, k: usize) -> Vec<ScoredDocument> {
    KeywordBaseline::new(store).search(query, k)
}

/// [`keyword_baseline`] with the per-record token sets computed once, for
/// running many queries against the same store.
pub struct KeywordBaseline {
    docs: Vec<(String, BTreeSet<String>)>,
}

impl KeywordBaseline {
    pub fn new(store: &CorpusStore) -> Self {
        let docs = store
            .records()
            .map(|r| {
                (
                    r.pmid.clone(),
                    keyword_tokens(&crate::embedding::document_text(r)),
                )
            })
            .collect();
        Self { docs }
    }

    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredDocument> {
        let wanted = keyword_tokens(query);
        if wanted.is_empty() || k == 0 {
            return Vec::new();
        }
        let total = wanted.len() as f64;
        let scored = self
            .docs
            .iter()
            .filter_map(|(pmid, have)| {
                let hits = wanted.iter().filter(|t| have.contains(*t)).count();
                (hits > 0).then(|| (pmid.clone(), hits as f64 / total))
            })
            .collect();
        rank_scores(scored, k)
    }
}
