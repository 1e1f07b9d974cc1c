use serde::Deserialize;
use serde_json::Value;

use super::{AuthorRef, EntryPosition, ParseOutput, PublicationRecord, RecordError, Rejection};

#[derive(Deserialize)]
struct RawEntry {
    pmid: Option<Value>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    affiliations: Vec<String>,
    #[serde(default)]
    keywords: Vec<String>,
    year: Option<i64>,
}

pub(super) fn parse(text: &str) -> ParseOutput {
    let mut out = ParseOutput::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let position = EntryPosition::Line { line: idx + 1 };
        match parse_line(line) {
            Ok(record) => out.records.push(record),
            Err(err) => out.rejections.push(Rejection {
                position,
                reason: err.to_string(),
            }),
        }
    }
    out
}

fn parse_line(line: &str) -> Result<PublicationRecord, RecordError> {
    let raw: RawEntry = serde_json::from_str(line)
        .map_err(|e| RecordError::Malformed(format!("invalid JSON: {e}")))?;

    let pmid = match raw.pmid {
        None | Some(Value::Null) => return Err(RecordError::MissingPmid),
        Some(Value::String(s)) => s.trim().to_string(),
        // some exporters write PMIDs as bare integers
        Some(Value::Number(n)) if n.is_u64() => n.to_string(),
        Some(other) => return Err(RecordError::InvalidPmid(other.to_string())),
    };
    let year = match raw.year {
        None => None,
        Some(y) => Some(
            u16::try_from(y)
                .ok()
                .filter(|y| (super::MIN_YEAR..=super::MAX_YEAR).contains(y))
                .ok_or(RecordError::YearOutOfRange(y))?,
        ),
    };
    let record = PublicationRecord {
        pmid,
        title: raw.title.unwrap_or_default(),
        abstract_text: raw.abstract_text.unwrap_or_default(),
        authors: raw.authors.into_iter().map(AuthorRef::new).collect(),
        affiliations: raw.affiliations,
        keywords: raw.keywords,
        year,
    };
    record.validate()?;
    Ok(record)
}
