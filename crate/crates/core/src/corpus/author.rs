use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// An author as listed on a publication, plus the key used to merge spellings
/// of the same person across records.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AuthorRef {
    pub display_name: String,
    pub canonical_key: String,
}

impl AuthorRef {
    pub fn new(display_name: impl Into<String>) -> Self {
        let display_name = display_name.into();
        let canonical_key = normalize_author(&display_name);
        Self {
            display_name,
            canonical_key,
        }
    }
}

impl fmt::Display for AuthorRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name)
    }
}

// Authors travel as plain display-name strings; the key is always re-derived.
impl Serialize for AuthorRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.display_name)
    }
}

impl<'de> Deserialize<'de> for AuthorRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer).map(AuthorRef::new)
    }
}

/// Folds an author name into a canonical `family, given` key.
///
/// The name is NFKD-decomposed, combining marks are dropped, the result is
/// lowercased and whitespace runs collapse to a single space. A name without
/// a comma is read as `Family Given...` (the PubMed citation order) and gets
/// the comma inserted after the first token.
///
/// The function is total and idempotent.
pub fn normalize_author(display_name: &str) -> String {
    // lowercasing can itself emit combining marks ('İ' -> "i\u{307}"), so fold
    // until stable
    let mut folded = fold(display_name);
    for _ in 0..4 {
        let next = fold(&folded);
        if next == folded {
            break;
        }
        folded = next;
    }

    let (family, given) = match folded.split_once(',') {
        Some((family, given)) => (collapse_whitespace(family), collapse_whitespace(given)),
        None => {
            let mut tokens = folded.split_whitespace();
            let family = tokens.next().unwrap_or_default().to_string();
            let given = tokens.collect::<Vec<_>>().join(" ");
            (family, given)
        }
    };

    match (family.is_empty(), given.is_empty()) {
        (false, false) => format!("{family}, {given}"),
        (false, true) => family,
        (true, _) => given,
    }
}

fn fold(s: &str) -> String {
    s.chars()
        .flat_map(char::to_lowercase)
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .collect()
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
