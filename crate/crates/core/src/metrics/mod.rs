//! Edit distance and field-level CER/WER, on regular and normalized text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Decoded;
use crate::corpus::{normalize_text, CertificateRecord, FieldKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("unknown report format {0:?} (expected text, csv or json)")]
    UnknownFormat(String),
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(diag + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

fn prepare(s: &str, normalized: bool) -> String {
    if normalized {
        normalize_text(s)
    } else {
        s.to_string()
    }
}

/// Character edits and reference length.
pub fn cer(
    reference: &str,
    hypothesis: &str,
    normalized: bool,
) -> Result<(usize, usize), MetricsError> {
    let r: Vec<char> = prepare(reference, normalized).chars().collect();
    if r.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let h: Vec<char> = prepare(hypothesis, normalized).chars().collect();
    Ok((edit_distance(&r, &h), r.len()))
}

/// Word edits and reference word count; words are whitespace-separated runs.
pub fn wer(
    reference: &str,
    hypothesis: &str,
    normalized: bool,
) -> Result<(usize, usize), MetricsError> {
    let r = prepare(reference, normalized);
    let h = prepare(hypothesis, normalized);
    let rw: Vec<&str> = r.split_whitespace().collect();
    if rw.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let hw: Vec<&str> = h.split_whitespace().collect();
    Ok((edit_distance(&rw, &hw), rw.len()))
}

/// Summed edit counts for one comparison variant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub char_edits: usize,
    pub ref_chars: usize,
    pub word_edits: usize,
    pub ref_words: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.char_edits += o.char_edits;
        self.ref_chars += o.ref_chars;
        self.word_edits += o.word_edits;
        self.ref_words += o.ref_words;
    }

    fn of(reference: &str, hypothesis: &str, normalized: bool) -> Counts {
        // complete truth records never have empty fields
        let (char_edits, ref_chars) =
            cer(reference, hypothesis, normalized).expect("non-empty reference");
        let (word_edits, ref_words) =
            wer(reference, hypothesis, normalized).expect("non-empty reference");
        Counts {
            char_edits,
            ref_chars,
            word_edits,
            ref_words,
        }
    }

    pub fn cer(&self) -> f64 {
        rate(self.char_edits, self.ref_chars)
    }

    pub fn wer(&self) -> f64 {
        rate(self.word_edits, self.ref_words)
    }
}

fn rate(edits: usize, len: usize) -> f64 {
    if len == 0 {
        0.0
    } else {
        100.0 * edits as f64 / len as f64
    }
}

/// How rates are aggregated over pages and fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Σ edits / Σ reference length.
    #[default]
    Micro,
    /// Mean of per-page rates for a field; mean of field rates for the
    /// global row.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub field: FieldKey,
    pub cer_reg: f64,
    pub wer_reg: f64,
    /// `None` for digit-only fields, where normalization changes nothing.
    pub cer_norm: Option<f64>,
    pub wer_norm: Option<f64>,
    pub reg: Counts,
    pub norm: Counts,
    /// Pages on which the field was recovered without a decode defect.
    pub decoded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalScore {
    pub cer_reg: f64,
    pub wer_reg: f64,
    pub cer_norm: f64,
    pub wer_norm: f64,
    pub reg: Counts,
    pub norm: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub pages: usize,
    pub averaging: Averaging,
    pub fields: Vec<FieldScore>,
    pub global: GlobalScore,
    /// Decode defects by kind.
    pub defects: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn field(&self, key: FieldKey) -> &FieldScore {
        &self.fields[key.index()]
    }

    /// Share of pages on which `key` decoded without defect, in [0, 1].
    pub fn decode_rate(&self, key: FieldKey) -> f64 {
        if self.pages == 0 {
            0.0
        } else {
            self.field(key).decoded as f64 / self.pages as f64
        }
    }
}

fn norm_applicable(field: FieldKey) -> bool {
    field != FieldKey::DocumentNumber
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores predictions against complete truths. A field missing from a
/// prediction counts as a full deletion of the reference. Page-level decode
/// defects (no EOT, stray tokens) mark every field of that page as not
/// cleanly decoded.
pub fn evaluate(
    pairs: &[(CertificateRecord, Decoded)],
    strategy: &str,
    averaging: Averaging,
) -> EvalReport {
    let mut defects: BTreeMap<String, usize> = BTreeMap::new();
    // per field, per page: (reg, norm)
    let mut per_page: Vec<Vec<(Counts, Counts)>> =
        vec![Vec::with_capacity(pairs.len()); FieldKey::COUNT];
    let mut decoded = [0usize; FieldKey::COUNT];
    for (truth, pred) in pairs {
        let mut page_level = false;
        let mut bad = [false; FieldKey::COUNT];
        for d in &pred.defects {
            *defects.entry(d.kind().to_string()).or_default() += 1;
            match d.field() {
                Some(f) => bad[f.index()] = true,
                None => page_level = true,
            }
        }
        for field in FieldKey::ALL {
            let i = field.index();
            let r = truth.get(field);
            let h = pred.partial.get(field).unwrap_or("");
            per_page[i].push((Counts::of(r, h, false), Counts::of(r, h, true)));
            if !page_level && !bad[i] && pred.partial.get(field).is_some() {
                decoded[i] += 1;
            }
        }
    }

    let mut fields = Vec::with_capacity(FieldKey::COUNT);
    let mut global_reg = Counts::default();
    let mut global_norm = Counts::default();
    for field in FieldKey::ALL {
        let i = field.index();
        let mut reg = Counts::default();
        let mut norm = Counts::default();
        for (r, n) in &per_page[i] {
            reg.add(r);
            norm.add(n);
        }
        global_reg.add(&reg);
        global_norm.add(&norm);
        let (cer_reg, wer_reg, cer_norm, wer_norm) = match averaging {
            Averaging::Micro => (reg.cer(), reg.wer(), norm.cer(), norm.wer()),
            Averaging::Macro => {
                let m = |f: fn(&Counts) -> f64, pick_norm: bool| {
                    mean(
                        &per_page[i]
                            .iter()
                            .map(|(r, n)| f(if pick_norm { n } else { r }))
                            .collect::<Vec<_>>(),
                    )
                };
                (
                    m(Counts::cer, false),
                    m(Counts::wer, false),
                    m(Counts::cer, true),
                    m(Counts::wer, true),
                )
            }
        };
        let applicable = norm_applicable(field);
        fields.push(FieldScore {
            field,
            cer_reg,
            wer_reg,
            cer_norm: applicable.then_some(cer_norm),
            wer_norm: applicable.then_some(wer_norm),
            reg,
            norm,
            decoded: decoded[i],
        });
    }

    let global = match averaging {
        Averaging::Micro => GlobalScore {
            cer_reg: global_reg.cer(),
            wer_reg: global_reg.wer(),
            cer_norm: global_norm.cer(),
            wer_norm: global_norm.wer(),
            reg: global_reg,
            norm: global_norm,
        },
        Averaging::Macro => {
            let col =
                |f: &dyn Fn(&FieldScore) -> f64| mean(&fields.iter().map(f).collect::<Vec<_>>());
            GlobalScore {
                cer_reg: col(&|s| s.cer_reg),
                wer_reg: col(&|s| s.wer_reg),
                cer_norm: col(&|s| s.cer_norm.unwrap_or(s.cer_reg)),
                wer_norm: col(&|s| s.wer_norm.unwrap_or(s.wer_reg)),
                reg: global_reg,
                norm: global_norm,
            }
        }
    };

    EvalReport {
        strategy: strategy.to_string(),
        pages: pairs.len(),
        averaging,
        fields,
        global,
        defects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "table" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(MetricsError::UnknownFormat(s.to_string())),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

pub const REPORT_CSV_HEADER: &str = "field,cer_reg,cer_norm,wer_reg,wer_norm,ref_chars,ref_words";

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("reports serialize") + "\n"
        }
        ReportFormat::Csv => {
            let mut out = String::from(REPORT_CSV_HEADER);
            out.push('\n');
            for s in &report.fields {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    s.field.as_str(),
                    pct(Some(s.cer_reg)),
                    pct(s.cer_norm),
                    pct(Some(s.wer_reg)),
                    pct(s.wer_norm),
                    s.reg.ref_chars,
                    s.reg.ref_words
                );
            }
            let g = &report.global;
            let _ = writeln!(
                out,
                "global,{:.2},{:.2},{:.2},{:.2},{},{}",
                g.cer_reg, g.cer_norm, g.wer_reg, g.wer_norm, g.reg.ref_chars, g.reg.ref_words
            );
            out
        }
        ReportFormat::Text => {
            let mut out = format!("strategy: {}   pages: {}\n", report.strategy, report.pages);
            out.push_str(&table(&[report]));
            if !report.defects.is_empty() {
                let list: Vec<String> = report
                    .defects
                    .iter()
                    .map(|(k, n)| format!("{k} {n}"))
                    .collect();
                let _ = writeln!(out, "decode defects: {}", list.join(", "));
            }
            out
        }
    }
}

/// Row order of the text tables: fields that admit a standard form first,
/// then the personal names.
pub const TABLE_ORDER: [FieldKey; 9] = [
    FieldKey::DocumentNumber,
    FieldKey::YearOfEnrollment,
    FieldKey::Jurisdiction,
    FieldKey::Department,
    FieldKey::DateField1,
    FieldKey::DateField2,
    FieldKey::EnrolleeFullName,
    FieldKey::Parent1Name,
    FieldKey::Parent2Name,
];

fn table(reports: &[&EvalReport]) -> String {
    let mut out = format!("{:<22}", "");
    for r in reports {
        let _ = write!(out, " | {:^35}", r.strategy);
    }
    out.push('\n');
    let _ = write!(out, "{:<22}", "");
    for _ in reports {
        let _ = write!(out, " | {:^17} {:^17}", "CER (%)", "WER (%)");
    }
    out.push('\n');
    let _ = write!(out, "{:<22}", "field");
    for _ in reports {
        let _ = write!(
            out,
            " | {:>8} {:>8} {:>8} {:>8}",
            "reg.", "norm.", "reg.", "norm."
        );
    }
    out.push('\n');
    for field in TABLE_ORDER {
        let _ = write!(out, "{:<22}", field.label());
        for r in reports {
            let s = r.field(field);
            let _ = write!(
                out,
                " | {:>8} {:>8} {:>8} {:>8}",
                pct(Some(s.cer_reg)),
                pct(s.cer_norm),
                pct(Some(s.wer_reg)),
                pct(s.wer_norm)
            );
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<22}", "global");
    for r in reports {
        let g = &r.global;
        let _ = write!(
            out,
            " | {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            g.cer_reg, g.cer_norm, g.wer_reg, g.wer_norm
        );
    }
    out.push('\n');
    out
}

/// Several reports side by side, one column group per report.
pub fn render_comparison(reports: &[EvalReport]) -> String {
    let refs: Vec<&EvalReport> = reports.iter().collect();
    let pages: Vec<String> = reports
        .iter()
        .map(|r| format!("{} ({} pages)", r.strategy, r.pages))
        .collect();
    format!("compared: {}\n{}", pages.join(", "), table(&refs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{ParseDefect, PartialRecord};

    fn truth() -> CertificateRecord {
        CertificateRecord::new(
            [
                "232",
                "NOBLE ALONSO ROCÍO",
                "doce",
                "de la 1a",
                "TACUAREMBÓ",
                "José Enrique Noble",
                "veintinueve",
                "febrero de 2012",
                "Rocío Marimelda Alonso",
            ]
            .map(String::from),
        )
        .unwrap()
    }

    fn exact(r: &CertificateRecord) -> Decoded {
        Decoded {
            partial: PartialRecord::from(r),
            defects: vec![],
        }
    }

    #[test]
    fn distances() {
        let d = |a: &str, b: &str| {
            edit_distance(
                &a.chars().collect::<Vec<_>>(),
                &b.chars().collect::<Vec<_>>(),
            )
        };
        assert_eq!(d("abc", "abc"), 0);
        assert_eq!(d("", "abc"), 3);
        assert_eq!(d("abc", ""), 3);
        assert_eq!(d("catorce", "cocer"), 4);
        assert_eq!(d("kitten", "sitting"), 3);
    }

    #[test]
    fn cer_and_wer_examples() {
        assert_eq!(cer("veintiocho", "veintiocho", false).unwrap(), (0, 10));
        // every letter after the T differs in case
        assert_eq!(cer("TACUAREMBÓ", "Tacuarembó", false).unwrap().0, 9);
        assert_eq!(cer("TACUAREMBÓ", "Tacuarembó", true).unwrap().0, 0);
        assert_eq!(cer("dieciocho", "diecischo", false).unwrap(), (1, 9));
        assert_eq!(wer("mayo de 2014", "mayo de 2014", false).unwrap(), (0, 3));
        assert_eq!(wer("de la 1a", "de la 1r", false).unwrap(), (1, 3));
        assert_eq!(
            wer("Alberto C. Bustos", "Alberto Carlos Bustos", false).unwrap(),
            (1, 3)
        );
        assert_eq!(cer("", "x", false), Err(MetricsError::EmptyReference));
        assert_eq!(wer("  ", "x", false), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let t = truth();
        let rep = evaluate(&[(t.clone(), exact(&t))], "normalized", Averaging::Micro);
        assert_eq!(rep.global.cer_reg, 0.0);
        assert!(rep
            .fields
            .iter()
            .all(|s| s.cer_reg == 0.0 && s.decoded == 1));
        assert_eq!(rep.field(FieldKey::DocumentNumber).cer_norm, None);
    }

    #[test]
    fn micro_average_arithmetic() {
        // 20 pages, document number "1234567890" (10 chars) each: 200 chars
        let mut t = truth();
        t.set(FieldKey::DocumentNumber, "1234567890").unwrap();
        let mut pairs: Vec<_> = (0..20).map(|_| (t.clone(), exact(&t))).collect();
        pairs[3].1.partial.values[0] = Some("1234567891".into());
        let rep = evaluate(&pairs, "x", Averaging::Micro);
        assert!((rep.field(FieldKey::DocumentNumber).cer_reg - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_field_is_full_deletion() {
        let t = truth();
        let mut d = exact(&t);
        d.partial.values[FieldKey::Department.index()] = None;
        d.defects.push(ParseDefect::MissingField {
            field: FieldKey::Department,
        });
        let rep = evaluate(&[(t, d)], "x", Averaging::Micro);
        let s = rep.field(FieldKey::Department);
        assert_eq!(s.cer_reg, 100.0);
        assert_eq!(s.decoded, 0);
        assert_eq!(rep.field(FieldKey::Jurisdiction).decoded, 1);
        assert_eq!(rep.defects["missing_field"], 1);
    }

    #[test]
    fn page_level_defect_spoils_every_field() {
        let t = truth();
        let mut d = exact(&t);
        d.defects.push(ParseDefect::MissingEot);
        let rep = evaluate(&[(t, d)], "x", Averaging::Micro);
        assert!(rep.fields.iter().all(|s| s.decoded == 0));
    }

    #[test]
    fn macro_differs_from_micro() {
        let t = truth();
        let mut short = t.clone();
        short.set(FieldKey::DocumentNumber, "1").unwrap();
        let mut wrong = exact(&short);
        wrong.partial.values[0] = Some("2".into());
        let pairs = vec![(short, wrong), (t.clone(), exact(&t))];
        let micro = evaluate(&pairs, "x", Averaging::Micro);
        let mac = evaluate(&pairs, "x", Averaging::Macro);
        assert!((micro.field(FieldKey::DocumentNumber).cer_reg - 25.0).abs() < 1e-9);
        assert!((mac.field(FieldKey::DocumentNumber).cer_reg - 50.0).abs() < 1e-9);
    }

    #[test]
    fn formats() {
        let t = truth();
        let rep = evaluate(&[(t.clone(), exact(&t))], "diplomatic", Averaging::Micro);
        let csv = render_report(&rep, ReportFormat::Csv);
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert!(csv.contains("\ndocument_number,0.00,-,0.00,-,3,1\n"));
        assert_eq!(csv.lines().count(), 11);
        let txt = render_report(&rep, ReportFormat::Text);
        assert!(txt.contains("reg.    norm."));
        let year = txt.find("year of enrollment").unwrap();
        assert!(year < txt.find("enrollee").unwrap());
        let back: EvalReport =
            serde_json::from_str(&render_report(&rep, ReportFormat::Json)).unwrap();
        assert_eq!(back, rep);
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
    }

    #[test]
    fn comparison_of_identical_reports_has_identical_columns() {
        let t = truth();
        let rep = evaluate(&[(t.clone(), exact(&t))], "a", Averaging::Micro);
        let cmp = render_comparison(&[rep.clone(), rep]);
        for line in cmp.lines().skip(2) {
            let cols: Vec<&str> = line.split(" | ").collect();
            assert_eq!(cols.len(), 3);
            assert_eq!(cols[1], cols[2]);
        }
    }
}
