use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::corpus::{CertificateRecord, FieldKey};

use super::{CodecError, TokenId};

pub const EOT_NAME: &str = "<eot>";

/// What a token id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Char(char),
    /// Index into [`TokenDictionary::markers`].
    Marker(usize),
    Eot,
}

/// Characters, then markers, then EOT, with contiguous ids in that order.
///
/// Markers are named; a certificate dictionary has exactly one marker per
/// [`FieldKey`], named after it. Dictionaries of other tasks (a donor model
/// trained on a different layout, say) may carry other marker names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenDictionary {
    chars: Vec<char>,
    markers: Vec<String>,
    char_ids: HashMap<char, TokenId>,
    marker_fields: Vec<Option<FieldKey>>,
    field_markers: [Option<TokenId>; FieldKey::COUNT],
}

impl TokenDictionary {
    pub fn new(chars: Vec<char>, markers: Vec<String>) -> Result<Self, CodecError> {
        let mut char_ids = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if char_ids.insert(c, i as TokenId).is_some() {
                return Err(CodecError::Invalid(format!("duplicate character {c:?}")));
            }
        }
        let mut names = BTreeSet::new();
        for m in &markers {
            if m.is_empty() || m == EOT_NAME || !names.insert(m.as_str()) {
                return Err(CodecError::Invalid(format!(
                    "bad or duplicate marker {m:?}"
                )));
            }
        }
        let marker_fields: Vec<Option<FieldKey>> = markers.iter().map(|m| m.parse().ok()).collect();
        let mut field_markers = [None; FieldKey::COUNT];
        for (i, f) in marker_fields.iter().enumerate() {
            if let Some(f) = f {
                field_markers[f.index()] = Some((chars.len() + i) as TokenId);
            }
        }
        Ok(Self {
            chars,
            markers,
            char_ids,
            marker_fields,
            field_markers,
        })
    }

    /// Dictionary over `chars` with the nine certificate field markers.
    pub fn for_certificates(mut chars: Vec<char>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        let markers = FieldKey::ALL
            .iter()
            .map(|k| k.as_str().to_string())
            .collect();
        Self::new(chars, markers).expect("field markers are distinct")
    }

    pub fn len(&self) -> usize {
        self.chars.len() + self.markers.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    pub fn eot(&self) -> TokenId {
        (self.chars.len() + self.markers.len()) as TokenId
    }

    pub fn char_id(&self, c: char) -> Option<TokenId> {
        self.char_ids.get(&c).copied()
    }

    pub fn marker_id(&self, field: FieldKey) -> Option<TokenId> {
        self.field_markers[field.index()]
    }

    /// Field named by marker index `m`, if any.
    pub fn marker_field(&self, m: usize) -> Option<FieldKey> {
        self.marker_fields.get(m).copied().flatten()
    }

    /// Whether every certificate field has a marker.
    pub fn covers_all_fields(&self) -> bool {
        self.field_markers.iter().all(Option::is_some)
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        let id = id as usize;
        let nc = self.chars.len();
        let nm = self.markers.len();
        if id < nc {
            Some(TokenKind::Char(self.chars[id]))
        } else if id < nc + nm {
            Some(TokenKind::Marker(id - nc))
        } else if id == nc + nm {
            Some(TokenKind::Eot)
        } else {
            None
        }
    }

    pub fn is_char(&self, id: TokenId) -> bool {
        (id as usize) < self.chars.len()
    }

    /// A stable name for each token, used to align dictionaries:
    /// `c:<char>`, `m:<marker>`, or `<eot>`.
    pub fn token_name(&self, id: TokenId) -> Option<String> {
        self.kind(id).map(|k| match k {
            TokenKind::Char(c) => format!("c:{c}"),
            TokenKind::Marker(m) => format!("m:{}", self.markers[m]),
            TokenKind::Eot => EOT_NAME.to_string(),
        })
    }

    pub fn id_of_name(&self, name: &str) -> Option<TokenId> {
        if name == EOT_NAME {
            return Some(self.eot());
        }
        if let Some(c) = name.strip_prefix("c:") {
            let mut it = c.chars();
            return match (it.next(), it.next()) {
                (Some(c), None) => self.char_id(c),
                _ => None,
            };
        }
        let m = name.strip_prefix("m:")?;
        self.markers
            .iter()
            .position(|x| x == m)
            .map(|i| (self.chars.len() + i) as TokenId)
    }

    /// Serializes as UTF-8 text: one token per line under `#CHARS`,
    /// `#MARKERS`, `#EOT` headers. Line order defines ids.
    pub fn to_text(&self) -> String {
        let mut out = String::from("#CHARS\n");
        for c in &self.chars {
            let _ = writeln!(out, "{c}");
        }
        out.push_str("#MARKERS\n");
        for m in &self.markers {
            let _ = writeln!(out, "{m}");
        }
        let _ = writeln!(out, "#EOT\n{EOT_NAME}");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CodecError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Chars,
            Markers,
            Eot,
        }
        let mut section = Section::None;
        let mut chars = Vec::new();
        let mut markers = Vec::new();
        let mut eot_seen = false;
        let body = text.strip_suffix('\n').unwrap_or(text);
        for (i, line) in body.split('\n').enumerate() {
            let err = |message: &str| CodecError::Format {
                line: i + 1,
                message: message.to_string(),
            };
            match line {
                "#CHARS" if section == Section::None => section = Section::Chars,
                "#MARKERS" if section == Section::Chars => section = Section::Markers,
                "#EOT" if section == Section::Markers => section = Section::Eot,
                _ => match section {
                    Section::None => return Err(err("expected #CHARS header")),
                    Section::Chars => {
                        let mut it = line.chars();
                        match (it.next(), it.next()) {
                            (Some(c), None) => chars.push(c),
                            _ => return Err(err("character lines hold exactly one character")),
                        }
                    }
                    Section::Markers => markers.push(line.to_string()),
                    Section::Eot => {
                        if eot_seen || line != EOT_NAME {
                            return Err(err("EOT section holds exactly one <eot> line"));
                        }
                        eot_seen = true;
                    }
                },
            }
        }
        if !eot_seen {
            return Err(CodecError::Format {
                line: body.split('\n').count(),
                message: "missing #EOT section".into(),
            });
        }
        Self::new(chars, markers)
    }
}

/// Collects every character used by `records`, sorted by code point, and
/// adds the nine field markers and EOT.
pub fn build_dictionary(records: &[CertificateRecord]) -> TokenDictionary {
    let chars: BTreeSet<char> = records.iter().flat_map(|r| r.chars()).collect();
    TokenDictionary::for_certificates(chars.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: &str) -> CertificateRecord {
        CertificateRecord::new(std::array::from_fn(|_| v.to_string())).unwrap()
    }

    #[test]
    fn counts_for_two_letters() {
        let d = build_dictionary(&[rec("ab"), rec("ba")]);
        assert_eq!(d.chars(), &['a', 'b']);
        assert_eq!(d.markers().len(), 9);
        assert_eq!(d.len(), 12);
        assert_eq!(d.eot(), 11);
        assert!(d.covers_all_fields());
        assert_eq!(d.kind(2), Some(TokenKind::Marker(0)));
        assert_eq!(d.marker_field(0), Some(FieldKey::DocumentNumber));
        assert_eq!(d.kind(12), None);
    }

    #[test]
    fn new_character_grows_by_one() {
        let base = build_dictionary(&[rec("ab")]);
        let grown = build_dictionary(&[rec("ab"), rec("añ")]);
        assert_eq!(grown.chars().len(), base.chars().len() + 1);
    }

    #[test]
    fn deterministic() {
        let rs = [rec("zyx w"), rec("Ñandú")];
        assert_eq!(build_dictionary(&rs), build_dictionary(&rs));
    }

    #[test]
    fn text_round_trip_keeps_ids() {
        let d = build_dictionary(&[rec("de la 1a"), rec("Tacuarembó.")]);
        let text = d.to_text();
        assert!(text.starts_with("#CHARS\n \n.\n1\n"));
        let back = TokenDictionary::from_text(&text).unwrap();
        assert_eq!(back, d);
        for id in 0..d.len() as TokenId {
            assert_eq!(back.kind(id), d.kind(id));
        }
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(TokenDictionary::from_text("a\n").is_err());
        assert!(TokenDictionary::from_text("#CHARS\nab\n#MARKERS\n#EOT\n<eot>\n").is_err());
        assert!(TokenDictionary::from_text("#CHARS\na\n#MARKERS\nx\n").is_err());
        assert!(TokenDictionary::from_text("#CHARS\na\na\n#MARKERS\n#EOT\n<eot>\n").is_err());
    }

    #[test]
    fn foreign_markers_allowed() {
        let d = TokenDictionary::new(vec!['a'], vec!["sender".into(), "body".into()]).unwrap();
        assert!(!d.covers_all_fields());
        assert_eq!(d.id_of_name("m:body"), Some(2));
        assert_eq!(d.id_of_name("c:a"), Some(0));
        assert_eq!(d.id_of_name(EOT_NAME), Some(3));
        assert_eq!(d.token_name(1).unwrap(), "m:sender");
    }
}
