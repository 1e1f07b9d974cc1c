//! Retrieval-augmented prompt assembly.
//!
//! The prompt is the template's instruction text, then the retrieved
//! publications in rank order, then the question. When the result would
//! exceed the character budget, whole publications are dropped from the
//! lowest-ranked end.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::PublicationRecord;
use crate::index::ScoredDocument;

pub const DEFAULT_BUDGET_CHARS: usize = 12_000;
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/prompt_v1.txt");

const QUERY: &str = "{{query}}";
const CONTEXTS: &str = "{{contexts}}";
const CONTEXTS_WITH_SCORES: &str = "{{contexts_with_scores}}";
const BLOCK_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("budget of {budget} characters cannot fit {what} ({needed} needed)")]
    BudgetExhausted {
        budget: usize,
        needed: usize,
        what: &'static str,
    },
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("cannot read prompt template: {0}")]
    Io(#[from] std::io::Error),
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Query,
    Contexts,
}

/// A prompt template with exactly one `{{query}}` and exactly one
/// `{{contexts}}` (or `{{contexts_with_scores}}`, which adds the similarity
/// score to each block header).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    text: String,
    hash: String,
    // literal[0] slot[0] literal[1] slot[1] literal[2]
    literals: [String; 3],
    slots: [Slot; 2],
    include_scores: bool,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let count = |needle: &str| text.matches(needle).count();
        let plain = count(CONTEXTS);
        let scored = count(CONTEXTS_WITH_SCORES);
        if count(QUERY) != 1 {
            return Err(PromptError::Template(format!(
                "expected exactly one {QUERY}"
            )));
        }
        if plain + scored != 1 {
            return Err(PromptError::Template(format!(
                "expected exactly one of {CONTEXTS} or {CONTEXTS_WITH_SCORES}"
            )));
        }
        let contexts_marker = if scored == 1 {
            CONTEXTS_WITH_SCORES
        } else {
            CONTEXTS
        };
        let q = text.find(QUERY).expect("counted above");
        let c = text.find(contexts_marker).expect("counted above");
        let (first, first_len, second, second_len, slots) = if c < q {
            (
                c,
                contexts_marker.len(),
                q,
                QUERY.len(),
                [Slot::Contexts, Slot::Query],
            )
        } else {
            (
                q,
                QUERY.len(),
                c,
                contexts_marker.len(),
                [Slot::Query, Slot::Contexts],
            )
        };
        Ok(Self {
            text: text.to_string(),
            hash: sha256_hex(text),
            literals: [
                text[..first].to_string(),
                text[first + first_len..second].to_string(),
                text[second + second_len..].to_string(),
            ],
            slots,
            include_scores: scored == 1,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// SHA-256 of the template text, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn literal_chars(&self) -> usize {
        self.literals.iter().map(|l| l.chars().count()).sum()
    }

    fn render(&self, query: &str, contexts: &str) -> String {
        let mut out = String::with_capacity(self.text.len() + query.len() + contexts.len());
        for (i, slot) in self.slots.iter().enumerate() {
            out.push_str(&self.literals[i]);
            out.push_str(match slot {
                Slot::Query => query,
                Slot::Contexts => contexts,
            });
        }
        out.push_str(&self.literals[2]);
        out
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("built-in template is valid")
    }
}

/// Renders one retrieved publication:
///
/// ```text
/// [# <rank>] (PMID <pmid>, <year>) <title>
/// Authors: <name>, <name>, ...
/// <abstract>
/// ```
///
/// The abstract line is omitted when the abstract is empty, and the year
/// when the record has none.
pub fn render_context_block(rank: usize, record: &PublicationRecord, score: f64) -> String {
    render_block(rank, record, score, false)
}

fn render_block(
    rank: usize,
    record: &PublicationRecord,
    score: f64,
    include_score: bool,
) -> String {
    let mut header = format!("[# {rank}] (PMID {}", record.pmid);
    if let Some(year) = record.year {
        header.push_str(&format!(", {year}"));
    }
    if include_score {
        header.push_str(&format!(", score {score:.7}"));
    }
    let authors = record
        .authors
        .iter()
        .map(|a| a.display_name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let mut block = format!("{header}) {}\nAuthors: {authors}", record.title);
    if !record.abstract_text.is_empty() {
        block.push('\n');
        block.push_str(&record.abstract_text);
    }
    block
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub rank: usize,
    pub pmid: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub query: String,
    pub context_blocks: Vec<ContextBlock>,
    pub rendered_prompt: String,
    pub truncated: bool,
    pub template_hash: String,
}

impl PromptPayload {
    /// SHA-256 of the rendered prompt, hex encoded.
    pub fn prompt_hash(&self) -> String {
        sha256_hex(&self.rendered_prompt)
    }
}

/// Builds the prompt from `ranked`, which must already be in rank order.
pub fn build_prompt(
    query: &str,
    ranked: &[(ScoredDocument, &PublicationRecord)],
    budget_chars: usize,
    template: &PromptTemplate,
) -> Result<PromptPayload, PromptError> {
    let blocks: Vec<ContextBlock> = ranked
        .iter()
        .map(|(doc, record)| ContextBlock {
            rank: doc.rank,
            pmid: doc.pmid.clone(),
            text: render_block(doc.rank, record, doc.score, template.include_scores),
            score: doc.score,
        })
        .collect();

    let base = template.literal_chars() + query.chars().count();
    let sep = BLOCK_SEPARATOR.chars().count();
    let mut used = base;
    let mut fits = 0;
    for (i, block) in blocks.iter().enumerate() {
        let add = block.text.chars().count() + if i > 0 { sep } else { 0 };
        if used + add > budget_chars {
            break;
        }
        used += add;
        fits += 1;
    }
    if fits == 0 {
        let (needed, what) = match blocks.first() {
            Some(first) => (
                base + first.text.chars().count(),
                "preamble, query and one context block",
            ),
            None => (base, "preamble and query"),
        };
        if needed > budget_chars {
            return Err(PromptError::BudgetExhausted {
                budget: budget_chars,
                needed,
                what,
            });
        }
    }

    let truncated = fits < blocks.len();
    let mut blocks = blocks;
    blocks.truncate(fits);
    let contexts = blocks
        .iter()
        .map(|b| b.text.as_str())
        .collect::<Vec<_>>()
        .join(BLOCK_SEPARATOR);
    let rendered_prompt = template.render(query, &contexts);
    debug_assert!(rendered_prompt.chars().count() <= budget_chars);
    Ok(PromptPayload {
        query: query.to_string(),
        context_blocks: blocks,
        rendered_prompt,
        truncated,
        template_hash: template.hash().to_string(),
    })
}
