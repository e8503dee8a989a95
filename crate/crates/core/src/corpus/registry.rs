//! Registry CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spanish::parse_iso_date;
use super::CorpusError;

/// Header of the registry export, in column order.
pub const REGISTRY_COLUMNS: [&str; 8] = [
    "document_number",
    "enrollee_full_name",
    "year_of_enrollment",
    "jurisdiction",
    "department",
    "parent1_name",
    "date_of_birth",
    "parent2_name",
];

/// One row of the registry export, as stored by the civil registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRegistryRecord {
    pub document_number: String,
    pub enrollee_full_name: String,
    pub year_of_enrollment: String,
    pub jurisdiction: String,
    pub department: String,
    pub parent1_name: String,
    /// `YYYY-MM-DD`
    pub date_of_birth: String,
    pub parent2_name: String,
}

impl RawRegistryRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.document_number.is_empty()
            || !self.document_number.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(format!(
                "document_number {:?} is not a digit string",
                self.document_number
            ));
        }
        parse_iso_date(&self.date_of_birth).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Reads and validates a registry export.
pub fn load_registry_csv(path: impl AsRef<Path>) -> Result<Vec<RawRegistryRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_registry(file)
}

pub(crate) fn read_registry<R: Read>(reader: R) -> Result<Vec<RawRegistryRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in REGISTRY_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(CorpusError::MissingColumn(col.to_string()));
        }
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<RawRegistryRecord>() {
        let record = row.map_err(|e| CorpusError::Row {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        // header is line 1
        let line = out.len() as u64 + 2;
        record
            .validate()
            .map_err(|message| CorpusError::Row { line, message })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_registry_csv<W: Write>(
    writer: W,
    records: &[RawRegistryRecord],
) -> Result<(), CorpusError> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    wtr.write_record(REGISTRY_COLUMNS)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "document_number,enrollee_full_name,year_of_enrollment,jurisdiction,department,parent1_name,date_of_birth,parent2_name\n";

    #[test]
    fn reads_well_formed_rows() {
        let data = format!(
            "{HEADER}232,Noble Alonso Rocio,doce,Primera,Tacuarembó,José E. Noble,2012-02-29,Rocio M. Alonso\n\
             90,Pérez Ruiz Ana,catorce,Segunda,Tacuarembó,Juan Pérez,2014-05-31,Laura Ruiz\n\
             1154,Silva Sosa Martín,dieciseis,Primera,Tacuarembó,Pablo Silva,2016-03-28,Inés Sosa\n"
        );
        let recs = read_registry(data.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].department, "Tacuarembó");
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_registry(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let data = "document_number,enrollee_full_name\n1,x\n";
        match read_registry(data.as_bytes()) {
            Err(CorpusError::MissingColumn(c)) => assert_eq!(c, "year_of_enrollment"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_date_reports_line() {
        let data = format!(
            "{HEADER}1,A B C,doce,Primera,Tacuarembó,X Y,2012-01-01,Z W\n\
             2,A B C,doce,Primera,Tacuarembó,X Y,2014-13-01,Z W\n"
        );
        match read_registry(data.as_bytes()) {
            Err(CorpusError::Row { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("2014-13-01"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_digit_document_number_rejected() {
        let data = format!("{HEADER}12a,A B C,doce,Primera,Tacuarembó,X Y,2012-01-01,Z W\n");
        assert!(matches!(
            read_registry(data.as_bytes()),
            Err(CorpusError::Row { line: 2, .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let data = format!("{HEADER}232,\"Noble, Alonso\",doce,Primera,Tacuarembó,José E. Noble,2012-02-29,Rocio M. Alonso\n");
        let recs = read_registry(data.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_registry_csv(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), data);
    }
}
