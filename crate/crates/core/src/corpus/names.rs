use rand::Rng;

/// A personal name with a known split between given names and surnames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonName {
    pub given: Vec<String>,
    pub surnames: Vec<String>,
    /// Registry style for enrollees: "Noble Alonso Rocio".
    pub surnames_first: bool,
}

impl PersonName {
    pub fn new<S: Into<String>>(given: Vec<S>, surnames: Vec<S>) -> Self {
        Self {
            given: given.into_iter().map(Into::into).collect(),
            surnames: surnames.into_iter().map(Into::into).collect(),
            surnames_first: false,
        }
    }

    pub fn surnames_first(mut self) -> Self {
        self.surnames_first = true;
        self
    }

    fn join(&self, given: &[String]) -> String {
        let (a, b) = if self.surnames_first {
            (&self.surnames[..], given)
        } else {
            (given, &self.surnames[..])
        };
        a.iter()
            .chain(b.iter())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn full(&self) -> String {
        self.join(&self.given)
    }

    /// Same name with every word passed through `f`.
    pub fn map_words(&self, f: impl Fn(&str) -> String) -> Self {
        Self {
            given: self.given.iter().map(|w| f(w)).collect(),
            surnames: self.surnames.iter().map(|w| f(w)).collect(),
            surnames_first: self.surnames_first,
        }
    }
}

/// Replaces each given name after the first by its initial and a period,
/// independently with `probability`. Surnames are never touched.
///
/// "Alberto Carlos Bustos" → "Alberto C. Bustos"
pub fn abbreviate_middle_names<R: Rng + ?Sized>(
    name: &PersonName,
    probability: f64,
    rng: &mut R,
) -> String {
    let given: Vec<String> = name
        .given
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if i > 0 && rng.gen_bool(probability.clamp(0.0, 1.0)) {
                let initial = g.chars().next().map(String::from).unwrap_or_default();
                format!("{initial}.")
            } else {
                g.clone()
            }
        })
        .collect();
    name.join(&given)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn abbreviates_middle_given_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let name = PersonName::new(vec!["Alberto", "Carlos"], vec!["Bustos"]);
        assert_eq!(
            abbreviate_middle_names(&name, 1.0, &mut rng),
            "Alberto C. Bustos"
        );
        let name = PersonName::new(vec!["José", "Enrique"], vec!["Noble"]);
        assert_eq!(
            abbreviate_middle_names(&name, 1.0, &mut rng),
            "José E. Noble"
        );
        assert_eq!(
            abbreviate_middle_names(&name, 0.0, &mut rng),
            "José Enrique Noble"
        );
    }

    #[test]
    fn single_given_name_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let name = PersonName::new(vec!["Rocio"], vec!["Alonso"]);
        assert_eq!(
            abbreviate_middle_names(&name, 1.0, &mut rng),
            "Rocio Alonso"
        );
    }

    #[test]
    fn surnames_first_keeps_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let name =
            PersonName::new(vec!["Rocío", "Marimelda"], vec!["Noble", "Alonso"]).surnames_first();
        assert_eq!(name.full(), "Noble Alonso Rocío Marimelda");
        assert_eq!(
            abbreviate_middle_names(&name, 1.0, &mut rng),
            "Noble Alonso Rocío M."
        );
    }

    #[test]
    fn first_given_name_and_surnames_survive_any_draw() {
        let name = PersonName::new(vec!["Ana", "Lucía", "Inés"], vec!["Pérez", "Núñez"]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = abbreviate_middle_names(&name, 0.5, &mut rng);
            let words: Vec<_> = out.split(' ').collect();
            assert_eq!(words[0], "Ana");
            assert_eq!(&words[words.len() - 2..], &["Pérez", "Núñez"]);
        }
    }
}
