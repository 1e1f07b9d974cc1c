//! Maps `PubmedArticleSet` exports (efetch `retmode=xml`) onto [`PublicationRecord`].
//!
//! Each `PubmedArticle` is one entry; a bare `MedlineCitation` outside of a
//! `PubmedArticle` also counts, which covers MEDLINE baseline style files.
//! Inline markup inside titles and abstracts (`<i>`, `<sup>`, ...) is
//! flattened to its text.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    AuthorRef, EntryPosition, ParseError, ParseOutput, PublicationRecord, RecordError, Rejection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Pmid,
    Title,
    AbstractText,
    LastName,
    ForeName,
    Initials,
    CollectiveName,
    Affiliation,
    Keyword,
    PubYear,
    MedlineDate,
    ArticleDateYear,
}

/// Picks the text field (if any) that an element at the end of `path` fills.
fn field_for(path: &[String]) -> Option<Field> {
    let name = path.last()?.as_str();
    let parent = path.len().checked_sub(2).map(|i| path[i].as_str());
    let grandparent = path.len().checked_sub(3).map(|i| path[i].as_str());
    match (grandparent, parent, name) {
        (_, Some("MedlineCitation"), "PMID") => Some(Field::Pmid),
        (_, Some("Article"), "ArticleTitle") => Some(Field::Title),
        (_, Some("Abstract"), "AbstractText") => Some(Field::AbstractText),
        (_, Some("Author"), "LastName") => Some(Field::LastName),
        (_, Some("Author"), "ForeName") => Some(Field::ForeName),
        (_, Some("Author"), "Initials") => Some(Field::Initials),
        (_, Some("Author"), "CollectiveName") => Some(Field::CollectiveName),
        (Some("Author"), Some("AffiliationInfo"), "Affiliation") => Some(Field::Affiliation),
        (_, Some("KeywordList"), "Keyword") => Some(Field::Keyword),
        (_, Some("PubDate"), "Year") => Some(Field::PubYear),
        (_, Some("PubDate"), "MedlineDate") => Some(Field::MedlineDate),
        (_, Some("ArticleDate"), "Year") => Some(Field::ArticleDateYear),
        _ => None,
    }
}

#[derive(Default)]
struct AuthorParts {
    last: String,
    fore: String,
    initials: String,
    collective: String,
}

impl AuthorParts {
    fn display_name(&self) -> Option<String> {
        if !self.collective.is_empty() {
            return Some(self.collective.clone());
        }
        let given = if self.fore.is_empty() {
            &self.initials
        } else {
            &self.fore
        };
        match (self.last.is_empty(), given.is_empty()) {
            (true, true) => None,
            (false, true) => Some(self.last.clone()),
            (true, false) => Some(given.clone()),
            (false, false) => Some(format!("{}, {}", self.last, given)),
        }
    }
}

#[derive(Default)]
struct ArticleBuilder {
    pmid: Option<String>,
    title: String,
    abstract_parts: Vec<String>,
    authors: Vec<AuthorRef>,
    affiliations: Vec<String>,
    keywords: Vec<String>,
    pub_year: Option<String>,
    medline_date: Option<String>,
    article_date_year: Option<String>,
    current_author: Option<AuthorParts>,
}

impl ArticleBuilder {
    fn set(&mut self, field: Field, text: String, label: Option<String>) {
        match field {
            Field::Pmid => {
                self.pmid.get_or_insert(text);
            }
            Field::Title => self.title = text,
            Field::AbstractText => {
                if !text.is_empty() {
                    match label {
                        Some(label) => self.abstract_parts.push(format!("{label}: {text}")),
                        None => self.abstract_parts.push(text),
                    }
                }
            }
            Field::LastName | Field::ForeName | Field::Initials | Field::CollectiveName => {
                if let Some(author) = self.current_author.as_mut() {
                    let slot = match field {
                        Field::LastName => &mut author.last,
                        Field::ForeName => &mut author.fore,
                        Field::Initials => &mut author.initials,
                        _ => &mut author.collective,
                    };
                    *slot = text;
                }
            }
            Field::Affiliation => {
                if !text.is_empty() && !self.affiliations.contains(&text) {
                    self.affiliations.push(text);
                }
            }
            Field::Keyword => {
                if !text.is_empty() {
                    self.keywords.push(text);
                }
            }
            Field::PubYear => self.pub_year = Some(text),
            Field::MedlineDate => self.medline_date = Some(text),
            Field::ArticleDateYear => {
                self.article_date_year.get_or_insert(text);
            }
        }
    }

    fn finish_author(&mut self) {
        if let Some(name) = self.current_author.take().and_then(|a| a.display_name()) {
            self.authors.push(AuthorRef::new(name));
        }
    }

    fn build(self) -> Result<PublicationRecord, RecordError> {
        let year = [&self.pub_year, &self.medline_date, &self.article_date_year]
            .into_iter()
            .flatten()
            .find_map(|s| leading_year(s));
        let year = match year {
            Some(y) if (super::MIN_YEAR..=super::MAX_YEAR).contains(&y) => Some(y),
            Some(y) => return Err(RecordError::YearOutOfRange(i64::from(y))),
            None => None,
        };
        let record = PublicationRecord {
            pmid: self.pmid.ok_or(RecordError::MissingPmid)?,
            title: self.title,
            abstract_text: self.abstract_parts.join(" "),
            authors: self.authors,
            affiliations: self.affiliations,
            keywords: self.keywords,
            year,
        };
        record.validate()?;
        Ok(record)
    }
}

/// First run of four digits, e.g. `"1998 Dec-1999 Jan"` gives 1998.
fn leading_year(s: &str) -> Option<u16> {
    let bytes = s.as_bytes();
    bytes
        .windows(4)
        .position(|w| w.iter().all(u8::is_ascii_digit))
        .and_then(|i| s[i..i + 4].parse().ok())
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn local_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.local_name().as_ref()).into_owned()
}

fn label_attr(e: &BytesStart<'_>) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.as_ref() == b"Label")
        .and_then(|a| a.unescape_value().ok())
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
}

struct Capture {
    field: Field,
    depth: usize,
    text: String,
    label: Option<String>,
}

struct Entry {
    builder: ArticleBuilder,
    depth: usize,
    index: usize,
    byte_offset: u64,
}

pub(super) fn parse(text: &str) -> Result<ParseOutput, ParseError> {
    let mut reader = Reader::from_str(text);
    let mut out = ParseOutput::default();
    let mut path: Vec<String> = Vec::new();
    let mut entry: Option<Entry> = None;
    let mut capture: Option<Capture> = None;
    let mut entry_count = 0usize;

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event().map_err(|e| ParseError::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let name = local_name(&e);
                path.push(name);
                let name = path.last().map(String::as_str).unwrap_or_default();
                let is_article =
                    name == "PubmedArticle" || (name == "MedlineCitation" && entry.is_none());
                if is_article && entry.is_none() {
                    entry_count += 1;
                    entry = Some(Entry {
                        builder: ArticleBuilder::default(),
                        depth: path.len(),
                        index: entry_count,
                        byte_offset: offset,
                    });
                    continue;
                }
                let Some(current) = entry.as_mut() else {
                    continue;
                };
                if name == "Author" {
                    current.builder.current_author = Some(AuthorParts::default());
                }
                if capture.is_none() {
                    if let Some(field) = field_for(&path) {
                        capture = Some(Capture {
                            field,
                            depth: path.len(),
                            text: String::new(),
                            label: label_attr(&e),
                        });
                    }
                }
            }
            Event::End(_) => {
                let depth = path.len();
                if let Some(c) = capture.take_if(|c| c.depth == depth) {
                    if let Some(current) = entry.as_mut() {
                        current.builder.set(c.field, collapse(&c.text), c.label);
                    }
                }
                if path.last().is_some_and(|n| n == "Author") {
                    if let Some(current) = entry.as_mut() {
                        current.builder.finish_author();
                    }
                }
                if let Some(done) = entry.take_if(|e| e.depth == depth) {
                    let position = EntryPosition::Element {
                        index: done.index,
                        byte_offset: done.byte_offset,
                    };
                    match done.builder.build() {
                        Ok(record) => out.records.push(record),
                        Err(err) => out.rejections.push(Rejection {
                            position,
                            reason: err.to_string(),
                        }),
                    }
                }
                path.pop();
            }
            Event::Text(t) => {
                if let Some(c) = capture.as_mut() {
                    let decoded = t.decode().map_err(|e| ParseError::Xml {
                        offset,
                        message: e.to_string(),
                    })?;
                    c.text.push_str(&decoded);
                }
            }
            Event::CData(t) => {
                if let Some(c) = capture.as_mut() {
                    c.text.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::GeneralRef(r) => {
                if let Some(c) = capture.as_mut() {
                    let resolved = match r.resolve_char_ref() {
                        Ok(Some(ch)) => ch.to_string(),
                        _ => {
                            let name = String::from_utf8_lossy(&r).into_owned();
                            quick_xml::escape::resolve_predefined_entity(&name)
                                .map(str::to_string)
                                .unwrap_or_else(|| format!("&{name};"))
                        }
                    };
                    c.text.push_str(&resolved);
                }
            }
            Event::Eof => break,
            // empty elements carry no text; declarations and comments are skipped
            _ => {}
        }
    }
    Ok(out)
}
