//! Certificate field vocabulary and annotation construction.
//!
//! A certificate carries nine fields, always handled in the document's reading
//! order (see [`FieldKey::ALL`]). Registry exports provide one representation of
//! a certificate (formatted dates, abbreviated middle names); a verbatim
//! transcription of the handwriting provides another. [`build_annotation`]
//! turns either, or a per-field mix of both, into the [`CertificateRecord`] the
//! model is trained on.

mod jsonl;
mod names;
mod registry;
mod spanish;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{read_annotations, write_annotations, AnnotationLine};
pub use names::{abbreviate_middle_names, PersonName};
pub use registry::{load_registry_csv, write_registry_csv, RawRegistryRecord, REGISTRY_COLUMNS};
pub use spanish::{
    day_to_words, month_name, normalize_char, normalize_text, split_date, year_to_words,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("day {0} is outside 1..=31")]
    DayOutOfRange(u32),
    #[error("invalid date {0:?}")]
    InvalidDate(String),
    #[error("field {0} has an empty value")]
    EmptyField(FieldKey),
    #[error("field {0} appears more than once")]
    DuplicateField(FieldKey),
    #[error("field {0} is missing")]
    MissingField(FieldKey),
    #[error("unknown field key {0:?}")]
    UnknownField(String),
    #[error("unknown annotation strategy {0:?}")]
    UnknownStrategy(String),
    #[error("strategy {0} needs a verbatim transcription but none was supplied")]
    MissingDiplomaticTruth(AnnotationStrategy),
    #[error("registry schema: missing column {0:?}")]
    MissingColumn(String),
    #[error("registry line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("annotation line {line}: {message}")]
    Annotation { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The nine annotated fields of a birth certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FieldKey {
    #[serde(rename = "document_number")]
    DocumentNumber,
    #[serde(rename = "enrollee_full_name")]
    EnrolleeFullName,
    #[serde(rename = "year_of_enrollment")]
    YearOfEnrollment,
    #[serde(rename = "jurisdiction")]
    Jurisdiction,
    #[serde(rename = "department")]
    Department,
    #[serde(rename = "parent1_name")]
    Parent1Name,
    #[serde(rename = "date_field_1")]
    DateField1,
    #[serde(rename = "date_field_2")]
    DateField2,
    #[serde(rename = "parent2_name")]
    Parent2Name,
}

impl FieldKey {
    /// Canonical reading order.
    pub const ALL: [FieldKey; 9] = [
        FieldKey::DocumentNumber,
        FieldKey::EnrolleeFullName,
        FieldKey::YearOfEnrollment,
        FieldKey::Jurisdiction,
        FieldKey::Department,
        FieldKey::Parent1Name,
        FieldKey::DateField1,
        FieldKey::DateField2,
        FieldKey::Parent2Name,
    ];

    pub const COUNT: usize = 9;

    /// Position in the canonical reading order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldKey::DocumentNumber => "document_number",
            FieldKey::EnrolleeFullName => "enrollee_full_name",
            FieldKey::YearOfEnrollment => "year_of_enrollment",
            FieldKey::Jurisdiction => "jurisdiction",
            FieldKey::Department => "department",
            FieldKey::Parent1Name => "parent1_name",
            FieldKey::DateField1 => "date_field_1",
            FieldKey::DateField2 => "date_field_2",
            FieldKey::Parent2Name => "parent2_name",
        }
    }

    /// Human-readable label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            FieldKey::DocumentNumber => "document number",
            FieldKey::EnrolleeFullName => "enrollee's full name",
            FieldKey::YearOfEnrollment => "year of enrollment",
            FieldKey::Jurisdiction => "jurisdiction",
            FieldKey::Department => "department",
            FieldKey::Parent1Name => "1st parent's name",
            FieldKey::DateField1 => "date field 1",
            FieldKey::DateField2 => "date field 2",
            FieldKey::Parent2Name => "2nd parent's name",
        }
    }

    /// Fields holding personal names, which cannot be standardized.
    pub fn is_name(self) -> bool {
        matches!(
            self,
            FieldKey::EnrolleeFullName | FieldKey::Parent1Name | FieldKey::Parent2Name
        )
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldKey {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FieldKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownField(s.to_string()))
    }
}

/// A complete certificate: every field present once, non-empty, in reading order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CertificateRecord {
    values: [String; FieldKey::COUNT],
}

impl CertificateRecord {
    pub fn new(values: [String; FieldKey::COUNT]) -> Result<Self, CorpusError> {
        for (key, value) in FieldKey::ALL.iter().zip(values.iter()) {
            if value.is_empty() {
                return Err(CorpusError::EmptyField(*key));
            }
        }
        Ok(Self { values })
    }

    /// Builds a record from `(key, value)` pairs given in any order.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (FieldKey, S)>,
        S: Into<String>,
    {
        let mut slots: [Option<String>; FieldKey::COUNT] = Default::default();
        for (key, value) in pairs {
            let slot = &mut slots[key.index()];
            if slot.is_some() {
                return Err(CorpusError::DuplicateField(key));
            }
            *slot = Some(value.into());
        }
        let mut values: [String; FieldKey::COUNT] = Default::default();
        for (key, slot) in FieldKey::ALL.iter().zip(slots) {
            values[key.index()] = slot.ok_or(CorpusError::MissingField(*key))?;
        }
        Self::new(values)
    }

    pub fn get(&self, key: FieldKey) -> &str {
        &self.values[key.index()]
    }

    /// Replaces one field value, keeping the non-empty invariant.
    pub fn set(&mut self, key: FieldKey, value: impl Into<String>) -> Result<(), CorpusError> {
        let value = value.into();
        if value.is_empty() {
            return Err(CorpusError::EmptyField(key));
        }
        self.values[key.index()] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldKey, &str)> + '_ {
        FieldKey::ALL
            .iter()
            .map(move |&k| (k, self.values[k.index()].as_str()))
    }

    pub fn to_pairs(&self) -> Vec<(FieldKey, String)> {
        self.iter().map(|(k, v)| (k, v.to_string())).collect()
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.values.iter().flat_map(|v| v.chars())
    }
}

/// Which transcription convention an annotation set follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStrategy {
    /// Registry values reordered, dates split and spelled out.
    Normalized,
    /// Verbatim transcription of the handwriting.
    Diplomatic,
    /// Normalized for standardizable fields, diplomatic for names.
    Hybrid,
}

impl AnnotationStrategy {
    pub const ALL: [AnnotationStrategy; 3] = [
        AnnotationStrategy::Normalized,
        AnnotationStrategy::Diplomatic,
        AnnotationStrategy::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationStrategy::Normalized => "normalized",
            AnnotationStrategy::Diplomatic => "diplomatic",
            AnnotationStrategy::Hybrid => "hybrid",
        }
    }

    /// Whether `field` takes its value from the verbatim transcription.
    pub fn is_diplomatic(self, field: FieldKey) -> bool {
        match self {
            AnnotationStrategy::Normalized => false,
            AnnotationStrategy::Diplomatic => true,
            AnnotationStrategy::Hybrid => field.is_name(),
        }
    }

    pub fn needs_diplomatic_truth(self) -> bool {
        self != AnnotationStrategy::Normalized
    }
}

impl fmt::Display for AnnotationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationStrategy {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnnotationStrategy::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| CorpusError::UnknownStrategy(s.to_string()))
    }
}

/// Handwriting convention for the birth date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DateStyle {
    /// "veintiocho" / "marzo de 2016"
    Standard,
    /// "Veintiocho de Marzo" / "dos mil dieciseis"
    Verbose,
}

/// Registry values in reading order, with the birth date split into two fields.
pub fn normalized_record(raw: &RawRegistryRecord) -> Result<CertificateRecord, CorpusError> {
    let (date1, date2) = split_date(&raw.date_of_birth)?;
    CertificateRecord::new([
        raw.document_number.clone(),
        raw.enrollee_full_name.clone(),
        raw.year_of_enrollment.clone(),
        raw.jurisdiction.clone(),
        raw.department.clone(),
        raw.parent1_name.clone(),
        date1,
        date2,
        raw.parent2_name.clone(),
    ])
}

/// Builds the annotation of one certificate under `strategy`.
///
/// `diplomatic_truth` is the verbatim transcription; it is required for the
/// diplomatic and hybrid strategies and ignored otherwise.
pub fn build_annotation(
    raw: &RawRegistryRecord,
    strategy: AnnotationStrategy,
    diplomatic_truth: Option<&CertificateRecord>,
) -> Result<CertificateRecord, CorpusError> {
    let normalized = normalized_record(raw)?;
    if !strategy.needs_diplomatic_truth() {
        return Ok(normalized);
    }
    let truth = diplomatic_truth.ok_or(CorpusError::MissingDiplomaticTruth(strategy))?;
    CertificateRecord::from_pairs(FieldKey::ALL.iter().map(|&k| {
        let source = if strategy.is_diplomatic(k) {
            truth
        } else {
            &normalized
        };
        (k, source.get(k).to_string())
    }))
}
