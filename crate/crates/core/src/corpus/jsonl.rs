//! Annotation JSON-lines: one certificate per line,
//! `{"image": path, "strategy": s, "fields": [[key, text], ...]}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AnnotationStrategy, CertificateRecord, CorpusError, FieldKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub image: String,
    pub strategy: AnnotationStrategy,
    pub fields: Vec<(FieldKey, String)>,
}

impl AnnotationLine {
    pub fn new(
        image: impl Into<String>,
        strategy: AnnotationStrategy,
        record: &CertificateRecord,
    ) -> Self {
        Self {
            image: image.into(),
            strategy,
            fields: record.to_pairs(),
        }
    }

    pub fn record(&self) -> Result<CertificateRecord, CorpusError> {
        for (i, (k, _)) in self.fields.iter().enumerate() {
            if FieldKey::ALL.get(i) != Some(k) {
                return Err(CorpusError::Annotation {
                    line: 0,
                    message: format!("field {k} out of canonical order at position {i}"),
                });
            }
        }
        CertificateRecord::from_pairs(self.fields.iter().cloned())
    }
}

pub fn write_annotations<W: Write>(
    mut writer: W,
    lines: &[AnnotationLine],
) -> Result<(), CorpusError> {
    for line in lines {
        let json = serde_json::to_string(line).map_err(|e| CorpusError::Annotation {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(writer, "{json}")?;
    }
    Ok(())
}

/// Reads annotation lines and validates each into a complete record.
pub fn read_annotations<R: BufRead>(
    reader: R,
) -> Result<Vec<(AnnotationLine, CertificateRecord)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |message: String| CorpusError::Annotation {
            line: i + 1,
            message,
        };
        let parsed: AnnotationLine =
            serde_json::from_str(&line).map_err(|e| wrap(e.to_string()))?;
        let record = parsed.record().map_err(|e| wrap(e.to_string()))?;
        out.push((parsed, record));
    }
    Ok(out)
}
