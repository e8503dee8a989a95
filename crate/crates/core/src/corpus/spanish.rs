//! Spanish number words, month names, dates, and accent/case folding.
//!
//! Number words follow the unaccented spelling used by the registry
//! ("dieciseis", "veintidos").

use chrono::{Datelike, NaiveDate};

use super::CorpusError;

const UNITS: [&str; 30] = [
    "cero",
    "uno",
    "dos",
    "tres",
    "cuatro",
    "cinco",
    "seis",
    "siete",
    "ocho",
    "nueve",
    "diez",
    "once",
    "doce",
    "trece",
    "catorce",
    "quince",
    "dieciseis",
    "diecisiete",
    "dieciocho",
    "diecinueve",
    "veinte",
    "veintiuno",
    "veintidos",
    "veintitres",
    "veinticuatro",
    "veinticinco",
    "veintiseis",
    "veintisiete",
    "veintiocho",
    "veintinueve",
];

const TENS: [&str; 10] = [
    "",
    "",
    "",
    "treinta",
    "cuarenta",
    "cincuenta",
    "sesenta",
    "setenta",
    "ochenta",
    "noventa",
];

const HUNDREDS: [&str; 10] = [
    "",
    "ciento",
    "doscientos",
    "trescientos",
    "cuatrocientos",
    "quinientos",
    "seiscientos",
    "setecientos",
    "ochocientos",
    "novecientos",
];

const MONTHS: [&str; 12] = [
    "enero",
    "febrero",
    "marzo",
    "abril",
    "mayo",
    "junio",
    "julio",
    "agosto",
    "septiembre",
    "octubre",
    "noviembre",
    "diciembre",
];

fn below_hundred(n: u32) -> String {
    debug_assert!(n < 100);
    if n < 30 {
        UNITS[n as usize].to_string()
    } else if n % 10 == 0 {
        TENS[(n / 10) as usize].to_string()
    } else {
        format!("{} y {}", TENS[(n / 10) as usize], UNITS[(n % 10) as usize])
    }
}

fn below_thousand(n: u32) -> String {
    debug_assert!(n > 0 && n < 1000);
    match (n / 100, n % 100) {
        (0, r) => below_hundred(r),
        (1, 0) => "cien".to_string(),
        (h, 0) => HUNDREDS[h as usize].to_string(),
        (h, r) => format!("{} {}", HUNDREDS[h as usize], below_hundred(r)),
    }
}

/// Cardinal for 1..=9999.
fn cardinal(n: u32) -> String {
    debug_assert!(n > 0 && n < 10_000);
    let (thousands, rest) = (n / 1000, n % 1000);
    let head = match thousands {
        0 => None,
        1 => Some("mil".to_string()),
        t => Some(format!("{} mil", UNITS[t as usize])),
    };
    match (head, rest) {
        (None, r) => below_thousand(r),
        (Some(h), 0) => h,
        (Some(h), r) => format!("{h} {}", below_thousand(r)),
    }
}

/// Lowercase Spanish cardinal for a day of the month.
pub fn day_to_words(day: u32) -> Result<String, CorpusError> {
    if !(1..=31).contains(&day) {
        return Err(CorpusError::DayOutOfRange(day));
    }
    Ok(below_hundred(day))
}

/// Lowercase month name, 1-based.
pub fn month_name(month: u32) -> Option<&'static str> {
    MONTHS.get(month.checked_sub(1)? as usize).copied()
}

/// Year spelled out, e.g. 2016 → "dos mil dieciseis".
pub fn year_to_words(year: i32) -> Result<String, CorpusError> {
    if !(1..10_000).contains(&year) {
        return Err(CorpusError::InvalidDate(year.to_string()));
    }
    Ok(cardinal(year as u32))
}

pub(crate) fn parse_iso_date(iso: &str) -> Result<NaiveDate, CorpusError> {
    let bytes = iso.as_bytes();
    let shaped = bytes.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && bytes
            .iter()
            .enumerate()
            .all(|(i, b)| i == 4 || i == 7 || b.is_ascii_digit());
    if !shaped {
        return Err(CorpusError::InvalidDate(iso.to_string()));
    }
    let date = NaiveDate::parse_from_str(iso, "%Y-%m-%d")
        .map_err(|_| CorpusError::InvalidDate(iso.to_string()))?;
    if !(1800..=2100).contains(&date.year()) {
        return Err(CorpusError::InvalidDate(iso.to_string()));
    }
    Ok(date)
}

/// Splits an ISO date into the two certificate date fields:
/// the day in words, and "<month> de <YYYY>".
pub fn split_date(iso_date: &str) -> Result<(String, String), CorpusError> {
    let date = parse_iso_date(iso_date)?;
    let day = day_to_words(date.day())?;
    let month = month_name(date.month()).expect("chrono months are 1..=12");
    Ok((day, format!("{month} de {:04}", date.year())))
}

/// Folds case and strips diacritics from a single character.
pub fn normalize_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    let l = match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    };
    match l {
        'á' | 'à' | 'â' | 'ä' => 'a',
        'é' | 'è' | 'ê' | 'ë' => 'e',
        'í' | 'ì' | 'î' | 'ï' => 'i',
        'ó' | 'ò' | 'ô' | 'ö' => 'o',
        'ú' | 'ù' | 'û' | 'ü' => 'u',
        'ñ' => 'n',
        'ç' => 'c',
        other => other,
    }
}

/// Case- and accent-insensitive form used by the normalized metrics.
/// Maps characters one to one, so the character count is preserved.
pub fn normalize_text(s: &str) -> String {
    s.chars().map(normalize_char).collect()
}
