//! Synthetic certificate world: sampled people, dates, and per-writer
//! transcription habits.
//!
//! Each sample yields the registry row (what the civil registry stores) and
//! the verbatim transcription (what the writer put on paper). The two differ in
//! the ways registry data usually differs from handwriting: abbreviated middle
//! names, dropped accents, ordinal spellings, casing, and date phrasing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::names::{abbreviate_middle_names, PersonName};
use super::spanish::{day_to_words, month_name, year_to_words};
use super::{CertificateRecord, DateStyle, RawRegistryRecord};

const FEMALE_NAMES: &[&str] = &[
    "María",
    "Rocío",
    "Lucía",
    "Sofía",
    "Inés",
    "Ana",
    "Laura",
    "Carmen",
    "Elena",
    "Julia",
    "Paula",
    "Silvia",
    "Marta",
    "Rosa",
    "Beatriz",
    "Mónica",
    "Natalia",
    "Valeria",
    "Camila",
    "Ángela",
    "Gabriela",
    "Andrea",
    "Noelia",
    "Lorena",
    "Soledad",
    "Belén",
    "Raquel",
    "Mariela",
    "Marimelda",
    "Noemí",
];

const MALE_NAMES: &[&str] = &[
    "José", "Juan", "Carlos", "Alberto", "Martín", "Raúl", "Ramón", "Héctor", "Andrés", "Pablo",
    "Diego", "Jorge", "Luis", "Miguel", "Óscar", "Rubén", "Hugo", "Daniel", "Fernando", "Gonzalo",
    "Sergio", "Tomás", "Nicolás", "Matías", "Joaquín", "Agustín", "Ignacio", "Enrique", "Ricardo",
    "Walter", "Néstor", "Julián",
];

const SURNAMES: &[&str] = &[
    "González",
    "Rodríguez",
    "Pérez",
    "Fernández",
    "López",
    "Martínez",
    "García",
    "Sosa",
    "Silva",
    "Núñez",
    "Muñoz",
    "Peña",
    "Noble",
    "Alonso",
    "Bustos",
    "Ruiz",
    "Suárez",
    "Díaz",
    "Gómez",
    "Benítez",
    "Acosta",
    "Castro",
    "Olivera",
    "Cabrera",
    "Pereira",
    "Ferreira",
    "Méndez",
    "Romero",
    "Ríos",
    "Vázquez",
    "Ibáñez",
    "Techera",
    "Correa",
    "Cardozo",
    "Machado",
    "Viera",
    "Duarte",
    "Piñeyro",
    "Brum",
    "Bentancor",
];

const ORDINAL_WORDS: [&str; 3] = ["Primera", "Segunda", "Tercera"];
const ORDINAL_SUFFIX: [&str; 3] = ["ra", "da", "ra"];

pub const DEPARTMENT: &str = "Tacuarembó";

/// Knobs of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    /// Number of distinct writers (public servants) filling certificates.
    pub writers: u32,
    /// Probability that the registry abbreviates each middle given name.
    pub abbreviation_probability: f64,
    /// Fraction of certificates whose date is written in the verbose style.
    pub verbose_date_fraction: f64,
    /// Probability that a person has a second given name.
    pub middle_name_probability: f64,
    /// Enrollment years; births are registered in the same year.
    pub years: Vec<i32>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            writers: 15,
            abbreviation_probability: 0.5,
            verbose_date_fraction: 0.2,
            middle_name_probability: 0.5,
            years: vec![2008, 2012, 2014, 2016],
        }
    }
}

/// How a given writer transcribes the fields that admit variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriterHabits {
    pub writer: u32,
    pub enrollee_in_capitals: bool,
    pub writes_accents: bool,
    pub capitalizes_dates: bool,
    /// 0: "de la 1a", 1: "de la 1ra", 2: "Primera"
    pub jurisdiction_form: u8,
    pub department_in_capitals: bool,
}

impl WriterHabits {
    pub fn for_writer(writer: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 ^ u64::from(writer));
        Self {
            writer,
            enrollee_in_capitals: rng.gen_bool(0.5),
            writes_accents: rng.gen_bool(0.75),
            capitalizes_dates: rng.gen_bool(0.3),
            jurisdiction_form: rng.gen_range(0..3),
            department_in_capitals: rng.gen_bool(0.3),
        }
    }

    fn accents(&self, s: &str) -> String {
        if self.writes_accents {
            s.to_string()
        } else {
            strip_acute(s)
        }
    }

    fn jurisdiction(&self, n: usize) -> String {
        match self.jurisdiction_form {
            0 => format!("de la {}a", n + 1),
            1 => format!("de la {}{}", n + 1, ORDINAL_SUFFIX[n]),
            _ => ORDINAL_WORDS[n].to_string(),
        }
    }

    fn department(&self) -> String {
        let d = self.accents(DEPARTMENT);
        if self.department_in_capitals {
            d.to_uppercase()
        } else {
            d
        }
    }
}

/// Removes acute accents but keeps ñ and ü, as hurried writers do.
pub fn strip_acute(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'á' => 'a',
            'é' => 'e',
            'í' => 'i',
            'ó' => 'o',
            'ú' => 'u',
            'Á' => 'A',
            'É' => 'E',
            'Í' => 'I',
            'Ó' => 'O',
            'Ú' => 'U',
            other => other,
        })
        .collect()
}

pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// One sampled certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCertificate {
    pub registry: RawRegistryRecord,
    pub verbatim: CertificateRecord,
    pub writer: u32,
    pub date_style: DateStyle,
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, list: &[&'a str]) -> &'a str {
    list.choose(rng).expect("name lists are non-empty")
}

fn given_names<R: Rng + ?Sized>(rng: &mut R, female: bool, middle_probability: f64) -> Vec<String> {
    let list = if female { FEMALE_NAMES } else { MALE_NAMES };
    let first = pick(rng, list);
    let mut out = vec![first.to_string()];
    if rng.gen_bool(middle_probability) {
        let mut second = pick(rng, list);
        while second == first {
            second = pick(rng, list);
        }
        out.push(second.to_string());
    }
    out
}

/// Samples a certificate written by `writer`.
pub fn sample_certificate_by<R: Rng + ?Sized>(
    cfg: &WorldConfig,
    writer: u32,
    rng: &mut R,
) -> SampledCertificate {
    let habits = WriterHabits::for_writer(writer);

    let year = *cfg.years.choose(rng).expect("at least one year");
    let month = rng.gen_range(1..=12u32);
    let day = rng.gen_range(1..=days_in_month(year, month));
    let document_number = rng.gen_range(1..=1500u32).to_string();
    let jurisdiction = rng.gen_range(0..3usize);

    let father = pick(rng, SURNAMES);
    let mut mother = pick(rng, SURNAMES);
    while mother == father {
        mother = pick(rng, SURNAMES);
    }
    let female = rng.gen_bool(0.5);
    let enrollee = PersonName::new(
        given_names(rng, female, cfg.middle_name_probability),
        vec![father.to_string(), mother.to_string()],
    )
    .surnames_first();
    let parent1 = PersonName::new(
        given_names(rng, false, cfg.middle_name_probability),
        vec![father.to_string()],
    );
    let parent2 = PersonName::new(
        given_names(rng, true, cfg.middle_name_probability),
        vec![mother.to_string()],
    );

    // Registry: accents kept or dropped per record, middle names abbreviated.
    let registry_accents = rng.gen_bool(0.5);
    let registry_name = |name: &PersonName, rng: &mut R| {
        let n = if registry_accents {
            name.clone()
        } else {
            name.map_words(strip_acute)
        };
        abbreviate_middle_names(&n, cfg.abbreviation_probability, rng)
    };
    let year_words = year_to_words(year).expect("years are in range");
    let enrollment_word = year_words
        .strip_prefix("dos mil ")
        .unwrap_or(&year_words)
        .to_string();
    let registry = RawRegistryRecord {
        document_number: document_number.clone(),
        enrollee_full_name: registry_name(&enrollee, rng),
        year_of_enrollment: enrollment_word.clone(),
        jurisdiction: ORDINAL_WORDS[jurisdiction].to_string(),
        department: DEPARTMENT.to_string(),
        parent1_name: registry_name(&parent1, rng),
        date_of_birth: format!("{year:04}-{month:02}-{day:02}"),
        parent2_name: registry_name(&parent2, rng),
    };

    // Handwriting: full names, writer casing and accent habits.
    let date_style = if rng.gen_bool(cfg.verbose_date_fraction) {
        DateStyle::Verbose
    } else {
        DateStyle::Standard
    };
    let day_words = day_to_words(day).expect("valid day");
    let month_words = month_name(month).expect("valid month");
    let (date1, date2) = match date_style {
        DateStyle::Standard => {
            let (d, m) = if habits.capitalizes_dates {
                (capitalize(&day_words), capitalize(month_words))
            } else {
                (day_words, month_words.to_string())
            };
            (d, format!("{m} de {year:04}"))
        }
        DateStyle::Verbose => (
            format!("{} de {}", capitalize(&day_words), capitalize(month_words)),
            year_words,
        ),
    };
    let enrollee_written = {
        let full = habits.accents(&enrollee.full());
        if habits.enrollee_in_capitals {
            full.to_uppercase()
        } else {
            full
        }
    };
    let verbatim = CertificateRecord::new([
        document_number,
        enrollee_written,
        enrollment_word,
        habits.jurisdiction(jurisdiction),
        habits.department(),
        habits.accents(&parent1.full()),
        date1,
        date2,
        habits.accents(&parent2.full()),
    ])
    .expect("sampled values are non-empty");

    SampledCertificate {
        registry,
        verbatim,
        writer,
        date_style,
    }
}

/// Samples a certificate from a writer drawn uniformly.
pub fn sample_certificate<R: Rng + ?Sized>(cfg: &WorldConfig, rng: &mut R) -> SampledCertificate {
    let writer = rng.gen_range(0..cfg.writers.max(1));
    sample_certificate_by(cfg, writer, rng)
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        _ => 28,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_annotation, normalize_text, AnnotationStrategy, FieldKey};

    #[test]
    fn registry_rows_are_valid() {
        let cfg = WorldConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let s = sample_certificate(&cfg, &mut rng);
            s.registry.validate().unwrap();
            build_annotation(&s.registry, AnnotationStrategy::Normalized, None).unwrap();
        }
    }

    #[test]
    fn names_agree_after_normalization_unless_abbreviated() {
        let cfg = WorldConfig {
            abbreviation_probability: 0.0,
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let s = sample_certificate(&cfg, &mut rng);
            let norm = build_annotation(&s.registry, AnnotationStrategy::Normalized, None).unwrap();
            for k in FieldKey::ALL.into_iter().filter(|k| k.is_name()) {
                assert_eq!(
                    normalize_text(norm.get(k)),
                    normalize_text(s.verbatim.get(k))
                );
            }
        }
    }

    #[test]
    fn verbose_dates_follow_the_long_pattern() {
        let cfg = WorldConfig {
            verbose_date_fraction: 1.0,
            ..WorldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_certificate(&cfg, &mut rng);
        assert_eq!(s.date_style, DateStyle::Verbose);
        assert!(s.verbatim.get(FieldKey::DateField2).starts_with("dos mil "));
        assert!(s.verbatim.get(FieldKey::DateField1).contains(" de "));
    }

    #[test]
    fn habits_are_deterministic() {
        assert_eq!(WriterHabits::for_writer(3), WriterHabits::for_writer(3));
        let forms: std::collections::BTreeSet<_> = (0..15)
            .map(|w| WriterHabits::for_writer(w).jurisdiction_form)
            .collect();
        assert!(forms.len() > 1);
    }

    #[test]
    fn strip_acute_keeps_tilde() {
        assert_eq!(strip_acute("Núñez Ríos"), "Nuñez Rios");
        assert_eq!(capitalize("veintiocho"), "Veintiocho");
    }
}
