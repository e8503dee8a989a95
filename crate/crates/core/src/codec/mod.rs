//! Token dictionary and marker-tagged token sequences.
//!
//! A record is encoded as `⟨field⟩ chars… ⟨field⟩ chars… ⟨eot⟩` following the
//! canonical field order. Markers only open a field; the next marker (or the
//! end of transcription) closes it.

mod dictionary;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CertificateRecord, FieldKey};

pub use dictionary::{build_dictionary, TokenDictionary, TokenKind, EOT_NAME};

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("character {ch:?} in field {field} is not in the dictionary")]
    UnknownChar { ch: char, field: FieldKey },
    #[error("dictionary has no marker for field {0}")]
    MissingMarker(FieldKey),
    #[error("token id {0} is outside the dictionary")]
    UnknownId(TokenId),
    #[error("dictionary file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("dictionary: {0}")]
    Invalid(String),
}

/// Integer token ids, at most one EOT and only at the end.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Whether the last token is `dict`'s EOT.
    pub fn is_terminal(&self, dict: &TokenDictionary) -> bool {
        self.ids.last() == Some(&dict.eot())
    }
}

/// Problems found while decoding possibly malformed model output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseDefect {
    /// No marker (or no text after it) for this field.
    MissingField { field: FieldKey },
    /// The marker appeared more than once; the last occurrence was kept.
    DuplicateMarker { field: FieldKey },
    /// Characters before the first marker, dropped.
    LeadingText { chars: usize },
    /// The sequence ended without EOT.
    MissingEot,
    /// Tokens after EOT, ignored.
    TrailingTokens { count: usize },
    /// A marker of the dictionary that names no certificate field.
    ForeignMarker { id: TokenId },
    /// An id outside the dictionary.
    InvalidId { id: TokenId },
}

impl ParseDefect {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseDefect::MissingField { .. } => "missing_field",
            ParseDefect::DuplicateMarker { .. } => "duplicate_marker",
            ParseDefect::LeadingText { .. } => "leading_text",
            ParseDefect::MissingEot => "missing_eot",
            ParseDefect::TrailingTokens { .. } => "trailing_tokens",
            ParseDefect::ForeignMarker { .. } => "foreign_marker",
            ParseDefect::InvalidId { .. } => "invalid_id",
        }
    }

    /// The field this defect concerns, if any.
    pub fn field(&self) -> Option<FieldKey> {
        match self {
            ParseDefect::MissingField { field } | ParseDefect::DuplicateMarker { field } => {
                Some(*field)
            }
            _ => None,
        }
    }
}

/// Field values recovered from a token sequence; any may be absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartialRecord {
    pub values: [Option<String>; FieldKey::COUNT],
}

impl PartialRecord {
    pub fn get(&self, key: FieldKey) -> Option<&str> {
        self.values[key.index()].as_deref()
    }

    pub fn complete(&self) -> Option<CertificateRecord> {
        let values = self.values.clone().map(|v| v.unwrap_or_default());
        CertificateRecord::new(values).ok()
    }

    pub fn to_pairs(&self) -> Vec<(FieldKey, String)> {
        FieldKey::ALL
            .iter()
            .filter_map(|&k| self.get(k).map(|v| (k, v.to_string())))
            .collect()
    }
}

impl From<&CertificateRecord> for PartialRecord {
    fn from(r: &CertificateRecord) -> Self {
        let mut p = PartialRecord::default();
        for (k, v) in r.iter() {
            p.values[k.index()] = Some(v.to_string());
        }
        p
    }
}

/// Result of [`decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub partial: PartialRecord,
    pub defects: Vec<ParseDefect>,
}

impl Decoded {
    /// The complete record, when all nine fields were recovered non-empty.
    pub fn record(&self) -> Option<CertificateRecord> {
        self.partial.complete()
    }
}

/// Encodes a record as marker ids and character ids, terminated by EOT.
pub fn encode(
    record: &CertificateRecord,
    dict: &TokenDictionary,
) -> Result<TokenSequence, CodecError> {
    let mut ids = Vec::with_capacity(FieldKey::COUNT + 1 + record.chars().count());
    for (field, value) in record.iter() {
        ids.push(
            dict.marker_id(field)
                .ok_or(CodecError::MissingMarker(field))?,
        );
        for ch in value.chars() {
            ids.push(
                dict.char_id(ch)
                    .ok_or(CodecError::UnknownChar { ch, field })?,
            );
        }
    }
    ids.push(dict.eot());
    Ok(TokenSequence { ids })
}

/// Splits a sequence at its markers. Never fails: structural problems are
/// reported as [`ParseDefect`]s next to whatever could be recovered.
pub fn decode(seq: &TokenSequence, dict: &TokenDictionary) -> Decoded {
    let mut defects = Vec::new();
    let mut texts: [Option<String>; FieldKey::COUNT] = Default::default();
    let mut seen = [0usize; FieldKey::COUNT];
    let mut current: Option<usize> = None;
    let mut leading = 0usize;
    let mut terminated = false;

    for (pos, &id) in seq.ids.iter().enumerate() {
        match dict.kind(id) {
            Some(TokenKind::Eot) => {
                terminated = true;
                let rest = seq.ids.len() - pos - 1;
                if rest > 0 {
                    defects.push(ParseDefect::TrailingTokens { count: rest });
                }
                break;
            }
            Some(TokenKind::Marker(m)) => match dict.marker_field(m) {
                Some(field) => {
                    let i = field.index();
                    seen[i] += 1;
                    if seen[i] == 2 {
                        defects.push(ParseDefect::DuplicateMarker { field });
                    }
                    // last occurrence wins
                    texts[i] = Some(String::new());
                    current = Some(i);
                }
                None => {
                    defects.push(ParseDefect::ForeignMarker { id });
                    current = None;
                }
            },
            Some(TokenKind::Char(c)) => match current {
                Some(i) => texts[i].get_or_insert_with(String::new).push(c),
                None => leading += 1,
            },
            None => defects.push(ParseDefect::InvalidId { id }),
        }
    }
    if leading > 0 {
        defects.insert(0, ParseDefect::LeadingText { chars: leading });
    }
    if !terminated {
        defects.push(ParseDefect::MissingEot);
    }

    let mut partial = PartialRecord::default();
    for field in FieldKey::ALL {
        match texts[field.index()].take() {
            Some(t) if !t.is_empty() => partial.values[field.index()] = Some(t),
            _ => defects.push(ParseDefect::MissingField { field }),
        }
    }
    Decoded { partial, defects }
}

/// Human-readable rendering: markers as `⟨field_key⟩`, EOT as `⟨eot⟩`.
pub fn to_display(seq: &TokenSequence, dict: &TokenDictionary) -> Result<String, CodecError> {
    let mut out = String::new();
    for &id in &seq.ids {
        match dict.kind(id).ok_or(CodecError::UnknownId(id))? {
            TokenKind::Char(c) => out.push(c),
            TokenKind::Marker(m) => {
                let _ = write!(out, "⟨{}⟩", dict.markers()[m]);
            }
            TokenKind::Eot => out.push_str("⟨eot⟩"),
        }
    }
    Ok(out)
}
