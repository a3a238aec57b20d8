//! Rule-based gender detection and text intervention.
//!
//! `perturb(text, g)` rewrites every explicit gender indicator that does not
//! already express `g`, leaving all other bytes untouched. Names are never
//! swapped.

mod her;
mod lexicon;

pub use her::{resolve_her, HerResolver, HerSense, StoplistResolver};
pub use lexicon::{AmbiguousRule, GenderLexicon, RuleKind, UnidirectionalRule};

use lexicon::Rule;

use crate::corpus::{Dataset, Document, Gender};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || is_apostrophe(c)
}

/// Maximal runs of letters, digits and apostrophes. Everything else is gap.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (is_token_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                tokens.push(Token {
                    text: &text[s..i],
                    start: s,
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &text[s..],
            start: s,
            end: text.len(),
        });
    }
    tokens
}

/// Split a token into leading apostrophes, stem and contraction suffix:
/// `"He's"` -> `("", "He", "'s")`, `"'she'"` -> `("'", "she", "'")`.
pub fn token_parts(token: &str) -> (&str, &str, &str) {
    let body_start = token
        .char_indices()
        .find(|(_, c)| !is_apostrophe(*c))
        .map_or(token.len(), |(i, _)| i);
    let (prefix, body) = token.split_at(body_start);
    let stem_end = body
        .char_indices()
        .find(|(_, c)| is_apostrophe(*c))
        .map_or(body.len(), |(i, _)| i);
    let (stem, suffix) = body.split_at(stem_end);
    (prefix, stem, suffix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Casing {
    Lower,
    Title,
    Upper,
}

pub fn casing(token: &str) -> Casing {
    let letters: Vec<char> = token.chars().filter(|c| c.is_alphabetic()).collect();
    let upper = letters.iter().filter(|c| c.is_uppercase()).count();
    let lower = letters.iter().filter(|c| c.is_lowercase()).count();
    if letters.len() > 1 && lower == 0 && upper > 0 {
        Casing::Upper
    } else if letters.first().is_some_and(|c| c.is_uppercase()) {
        Casing::Title
    } else {
        Casing::Lower
    }
}

pub fn apply_casing(word: &str, casing: Casing) -> String {
    match casing {
        Casing::Lower => word.to_lowercase(),
        Casing::Upper => word.to_uppercase(),
        Casing::Title => {
            let mut chars = word.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
                None => String::new(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub gender: Gender,
    pub female: usize,
    pub male: usize,
}

impl Detection {
    pub fn total(&self) -> usize {
        self.female + self.male
    }
}

/// Count indicator tokens per gender; strict majority wins, ties are Unknown.
pub fn detect_gender(text: &str, lexicon: &GenderLexicon) -> Detection {
    let mut female = 0;
    let mut male = 0;
    for tok in tokenize(text) {
        let (_, stem, _) = token_parts(tok.text);
        match lexicon.gender_of(&stem.to_lowercase()) {
            Some(Gender::Female) => female += 1,
            Some(Gender::Male) => male += 1,
            _ => {}
        }
    }
    let gender = match female.cmp(&male) {
        std::cmp::Ordering::Greater => Gender::Female,
        std::cmp::Ordering::Less => Gender::Male,
        std::cmp::Ordering::Equal => Gender::Unknown,
    };
    Detection {
        gender,
        female,
        male,
    }
}

// ---------------------------------------------------------------------------
// Intervention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edit {
    /// Byte span of the replaced token in the original text.
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbation {
    pub text: String,
    pub edits: Vec<Edit>,
}

/// Rewrite `text` so that every indicator expresses `target`.
pub fn perturb(text: &str, target: Gender, lexicon: &GenderLexicon) -> Result<Perturbation> {
    if !target.is_known() {
        return Err(Error::Invalid("perturb target must be female or male".into()));
    }
    let tokens = tokenize(text);
    let mut edits = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let (prefix, stem, suffix) = token_parts(tok.text);
        let key = stem.to_lowercase();
        let Some(gender) = lexicon.gender_of(&key) else {
            continue;
        };
        if gender == target {
            continue;
        }
        let replacement = match lexicon.rule(&key) {
            Some(Rule::Fixed(t)) => t.as_str(),
            Some(Rule::Ambiguous {
                possessive,
                objective,
            }) => match lexicon.resolver().resolve(text, &tokens, i) {
                HerSense::Possessive => possessive.as_str(),
                HerSense::Objective => objective.as_str(),
            },
            None => continue,
        };
        let cased = apply_casing(replacement, casing(stem));
        edits.push(Edit {
            start: tok.start,
            end: tok.end,
            original: tok.text.to_string(),
            replacement: format!("{prefix}{cased}{suffix}"),
        });
    }

    let mut out = String::with_capacity(text.len() + 4 * edits.len());
    let mut cursor = 0;
    for e in &edits {
        out.push_str(&text[cursor..e.start]);
        out.push_str(&e.replacement);
        cursor = e.end;
    }
    out.push_str(&text[cursor..]);
    Ok(Perturbation { text: out, edits })
}

/// Both do-versions of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPair {
    pub original: Document,
    pub female_version: String,
    pub male_version: String,
    pub female_edits: Vec<Edit>,
    pub male_edits: Vec<Edit>,
}

pub fn perturbed_pair(doc: &Document, lexicon: &GenderLexicon) -> PerturbedPair {
    let f = perturb(&doc.text, Gender::Female, lexicon).expect("female is a valid target");
    let m = perturb(&doc.text, Gender::Male, lexicon).expect("male is a valid target");
    PerturbedPair {
        original: doc.clone(),
        female_version: f.text,
        male_version: m.text,
        female_edits: f.edits,
        male_edits: m.edits,
    }
}

/// The gender-flipped twin of a Female or Male document.
pub fn counterfactual(doc: &Document, lexicon: &GenderLexicon) -> Result<Document> {
    let flipped = doc.gender.opposite().ok_or_else(|| {
        Error::Invalid(format!(
            "document {} has unknown gender; no counterfactual exists",
            doc.id
        ))
    })?;
    let p = perturb(&doc.text, flipped, lexicon)?;
    Ok(Document {
        id: format!("{}#cf", doc.id),
        text: p.text,
        gender: flipped,
        is_counterfactual: true,
        source_id: Some(doc.id.clone()),
        ..doc.clone()
    })
}

/// Originals in order, followed by one counterfactual per gendered original.
pub fn augment_cda(dataset: &Dataset, lexicon: &GenderLexicon) -> Result<Dataset> {
    let mut docs = dataset.documents().to_vec();
    for doc in dataset.gendered() {
        docs.push(counterfactual(doc, lexicon)?);
    }
    dataset.derive(docs)
}
