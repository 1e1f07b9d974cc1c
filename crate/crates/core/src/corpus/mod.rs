//! Publication metadata: record types, ingest parsers and the in-memory store.

mod author;
mod jsonl;
mod pubmed_xml;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use author::{normalize_author, AuthorRef};

pub const MIN_YEAR: u16 = 1900;
pub const MAX_YEAR: u16 = 2100;

/// One PubMed entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicationRecord {
    pub pmid: String,
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub authors: Vec<AuthorRef>,
    #[serde(default)]
    pub affiliations: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<u16>,
}

impl PublicationRecord {
    pub fn new(pmid: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            pmid: pmid.into(),
            title: title.into(),
            abstract_text: String::new(),
            authors: Vec::new(),
            affiliations: Vec::new(),
            keywords: Vec::new(),
            year: None,
        }
    }

    pub fn with_abstract(mut self, text: impl Into<String>) -> Self {
        self.abstract_text = text.into();
        self
    }

    pub fn with_authors<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.authors = names.into_iter().map(AuthorRef::new).collect();
        self
    }

    pub fn with_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keywords = keywords.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_year(mut self, year: u16) -> Self {
        self.year = Some(year);
        self
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        validate_pmid(&self.pmid)?;
        if self.title.trim().is_empty() {
            return Err(RecordError::MissingTitle);
        }
        if let Some(year) = self.year {
            if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
                return Err(RecordError::YearOutOfRange(i64::from(year)));
            }
        }
        Ok(())
    }
}

/// Checks that a PMID is a nonempty run of ASCII digits.
pub fn validate_pmid(pmid: &str) -> Result<(), RecordError> {
    if pmid.is_empty() {
        return Err(RecordError::MissingPmid);
    }
    if !pmid.bytes().all(|b| b.is_ascii_digit()) {
        return Err(RecordError::InvalidPmid(pmid.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("missing pmid")]
    MissingPmid,
    #[error("pmid {0:?} is not all digits")]
    InvalidPmid(String),
    #[error("missing title")]
    MissingTitle,
    #[error("year {0} outside {MIN_YEAR}..={MAX_YEAR}")]
    YearOutOfRange(i64),
    #[error("{0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    PubmedXml,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "pubmed-xml" | "xml" => Ok(Self::PubmedXml),
            other => Err(format!(
                "unknown corpus format {other:?} (expected jsonl or pubmed-xml)"
            )),
        }
    }
}

/// Where a rejected entry sits in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EntryPosition {
    /// 1-based line of a JSON Lines file.
    Line { line: usize },
    /// 1-based index of the article element, with its starting byte offset.
    Element { index: usize, byte_offset: u64 },
}

impl fmt::Display for EntryPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Line { line } => write!(f, "line {line}"),
            Self::Element { index, byte_offset } => {
                write!(f, "article #{index} (byte {byte_offset})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub position: EntryPosition,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.position, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutput {
    pub records: Vec<PublicationRecord>,
    pub rejections: Vec<Rejection>,
}

/// Failures that stop parsing altogether.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("input is not valid UTF-8 (first bad byte at offset {offset})")]
    InvalidUtf8 { offset: usize },
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
}

/// Parses a corpus export. Entries that fail validation are reported in
/// [`ParseOutput::rejections`] and parsing continues; only an undecodable
/// stream (or XML that cannot be tokenized) is fatal.
pub fn parse_records(input: &[u8], format: CorpusFormat) -> Result<ParseOutput, ParseError> {
    let text = std::str::from_utf8(input).map_err(|e| ParseError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    match format {
        CorpusFormat::Jsonl => Ok(jsonl::parse(text)),
        CorpusFormat::PubmedXml => pubmed_xml::parse(text),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertReport {
    pub inserted: usize,
    pub replaced: usize,
    pub revision: u64,
}

/// The retrieval corpus, keyed by PMID.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStore {
    records: BTreeMap<String, PublicationRecord>,
    revision: u64,
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_parts(records: Vec<PublicationRecord>, revision: u64) -> Self {
        let records = records.into_iter().map(|r| (r.pmid.clone(), r)).collect();
        Self { records, revision }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, pmid: &str) -> Option<&PublicationRecord> {
        self.records.get(pmid)
    }

    /// Records in ascending PMID order.
    pub fn records(&self) -> impl Iterator<Item = &PublicationRecord> {
        self.records.values()
    }

    /// Inserts or replaces each record by PMID and bumps the revision once.
    ///
    /// When a PMID repeats inside `batch` the last occurrence wins, and the
    /// counts describe the collapsed batch (one count per distinct PMID).
    pub fn upsert_records(&mut self, batch: Vec<PublicationRecord>) -> UpsertReport {
        let mut collapsed: BTreeMap<String, PublicationRecord> = BTreeMap::new();
        for record in batch {
            collapsed.insert(record.pmid.clone(), record);
        }
        let (mut inserted, mut replaced) = (0, 0);
        for (pmid, record) in collapsed {
            match self.records.insert(pmid, record) {
                Some(_) => replaced += 1,
                None => inserted += 1,
            }
        }
        self.revision += 1;
        UpsertReport {
            inserted,
            replaced,
            revision: self.revision,
        }
    }
}
