//! Seeded synthetic corpora with explicit gender indicators, a hidden
//! gender proxy and a controllable gender/label correlation.
//!
//! Each document is two short sentences:
//!
//! ```text
//! Ms Vance c1w3 c0w7 zorblat. She c1w2 c1w9 her c1w0 herself.
//! ```
//!
//! Explicit documents use a title, a subject pronoun, a possessive followed
//! by a content word, and a reflexive, all taken from the default lexicon.
//! Documents without explicit signal use "Vance", "They", "their" and
//! "themselves" in the same slots. The proxy word is never in the lexicon, so
//! the do-operator cannot see it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Document, Gender};
use crate::error::{Error, Result};

pub const FEMALE_PROXY: &str = "zorblat";
pub const MALE_PROXY: &str = "quimber";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub docs_per_class: usize,
    /// Probability that a document of class `y` is Female.
    pub gender_skew: Vec<f64>,
    pub explicit_rate: f64,
    pub proxy_strength: f64,
    pub content_tokens_per_class: usize,
    pub doc_length: usize,
    /// Probability that a content slot draws from its own class's words
    /// rather than a uniformly random class.
    pub content_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 2,
            docs_per_class: 2000,
            gender_skew: vec![0.2, 0.8],
            explicit_rate: 1.0,
            proxy_strength: 0.9,
            content_tokens_per_class: 20,
            doc_length: 8,
            content_signal: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.docs_per_class == 0 {
            return Err(Error::Invalid("num_classes and docs_per_class must be positive".into()));
        }
        if self.content_tokens_per_class == 0 || self.doc_length == 0 {
            return Err(Error::Invalid(
                "content_tokens_per_class and doc_length must be positive".into(),
            ));
        }
        if self.gender_skew.len() != self.num_classes {
            return Err(Error::Invalid(format!(
                "gender_skew has {} entries for {} classes",
                self.gender_skew.len(),
                self.num_classes
            )));
        }
        let probs = self
            .gender_skew
            .iter()
            .map(|p| ("gender_skew", *p))
            .chain([
                ("explicit_rate", self.explicit_rate),
                ("proxy_strength", self.proxy_strength),
                ("content_signal", self.content_signal),
            ]);
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

pub fn content_token(class: usize, j: usize) -> String {
    format!("c{class}w{j}")
}

pub fn proxy_token(gender: Gender) -> Option<&'static str> {
    match gender {
        Gender::Female => Some(FEMALE_PROXY),
        Gender::Male => Some(MALE_PROXY),
        Gender::Unknown => None,
    }
}

struct Slots {
    title: &'static str,
    subject: &'static str,
    possessive: &'static str,
    reflexive: &'static str,
}

fn slots(gender: Gender, explicit: bool) -> Slots {
    match (explicit, gender) {
        (true, Gender::Female) => Slots {
            title: "Ms Vance",
            subject: "She",
            possessive: "her",
            reflexive: "herself",
        },
        (true, Gender::Male) => Slots {
            title: "Mr Vance",
            subject: "He",
            possessive: "his",
            reflexive: "himself",
        },
        _ => Slots {
            title: "Vance",
            subject: "They",
            possessive: "their",
            reflexive: "themselves",
        },
    }
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut docs = Vec::with_capacity(config.num_classes * config.docs_per_class);
    for class in 0..config.num_classes {
        for _ in 0..config.docs_per_class {
            let gender = if rng.gen_bool(config.gender_skew[class]) {
                Gender::Female
            } else {
                Gender::Male
            };
            let explicit = rng.gen_bool(config.explicit_rate);
            let proxy = rng.gen_bool(config.proxy_strength);
            let content: Vec<String> = (0..config.doc_length)
                .map(|_| {
                    let c = if rng.gen_bool(config.content_signal) {
                        class
                    } else {
                        rng.gen_range(0..config.num_classes)
                    };
                    content_token(c, rng.gen_range(0..config.content_tokens_per_class))
                })
                .collect();

            let s = slots(gender, explicit);
            let n = content.len();
            let half = n / 2;
            let mut first = vec![s.title.to_string()];
            first.extend_from_slice(&content[..half]);
            if proxy {
                first.push(proxy_token(gender).unwrap().to_string());
            }
            let mut second = vec![s.subject.to_string()];
            second.extend_from_slice(&content[half..n - 1]);
            second.push(s.possessive.to_string());
            second.push(content[n - 1].clone());
            second.push(s.reflexive.to_string());
            let text = format!("{}. {}.", first.join(" "), second.join(" "));

            docs.push((class, gender, text));
        }
    }
    docs.shuffle(&mut rng);
    let docs = docs
        .into_iter()
        .enumerate()
        .map(|(i, (class, gender, text))| {
            Document::new(format!("synth-{:06}", i + 1), text, class, gender)
        })
        .collect();
    let classes = (0..config.num_classes).map(|c| format!("class{c}")).collect();
    let mut provenance = std::collections::BTreeMap::new();
    provenance.insert("source".to_string(), "synth".to_string());
    provenance.insert("synth_config".to_string(), serde_json::to_string(config)?);
    Dataset::with_provenance(docs, classes, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturb::{augment_cda, detect_gender, perturb, GenderLexicon};

    fn small() -> SynthConfig {
        SynthConfig {
            docs_per_class: 50,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tags_match_detection_when_explicit() {
        let lex = GenderLexicon::default();
        let d = generate(&SynthConfig { explicit_rate: 0.5, ..small() }).unwrap();
        let mut explicit = 0;
        for doc in d.documents() {
            let det = detect_gender(&doc.text, &lex);
            if det.total() > 0 {
                explicit += 1;
                assert_eq!(det.gender, doc.gender, "{}", doc.text);
            }
        }
        assert!(explicit > 0 && explicit < d.len());
    }

    #[test]
    fn counterfactual_is_an_involution() {
        let lex = GenderLexicon::default();
        let d = generate(&small()).unwrap();
        for doc in d.documents() {
            let flipped = perturb(&doc.text, doc.gender.opposite().unwrap(), &lex).unwrap().text;
            assert_eq!(perturb(&flipped, doc.gender, &lex).unwrap().text, doc.text);
        }
        assert_eq!(augment_cda(&d, &lex).unwrap().len(), 2 * d.len());
    }

    #[test]
    fn proxies_are_not_indicators() {
        let lex = GenderLexicon::default();
        assert!(!lex.is_indicator(FEMALE_PROXY));
        assert!(!lex.is_indicator(MALE_PROXY));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig { gender_skew: vec![0.5], ..small() }).is_err());
        assert!(generate(&SynthConfig { proxy_strength: 1.5, ..small() }).is_err());
        assert!(generate(&SynthConfig { docs_per_class: 0, ..small() }).is_err());
    }
}
