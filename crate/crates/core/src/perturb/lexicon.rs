use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::corpus::Gender;
use crate::error::{Error, Result};

use super::her::{HerResolver, StoplistResolver};

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Bidirectional,
    Unidirectional,
    Ambiguous,
}

impl RuleKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "bi" => Some(RuleKind::Bidirectional),
            "uni" => Some(RuleKind::Unidirectional),
            "ambiguous" => Some(RuleKind::Ambiguous),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnidirectionalRule {
    pub source: String,
    pub source_gender: Gender,
    pub target: String,
}

/// A source whose target depends on its grammatical role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguousRule {
    pub source: String,
    pub source_gender: Gender,
    pub possessive_target: String,
    pub objective_target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Rule {
    Fixed(String),
    Ambiguous { possessive: String, objective: String },
}

/// Indicator vocabulary plus the swap rules that implement `do(G = g)` on text.
///
/// All tokens are stored lowercase. The lexicon is immutable once built and
/// safe to share across threads.
#[derive(Clone)]
pub struct GenderLexicon {
    bidirectional: Vec<(String, String)>,
    unidirectional: Vec<UnidirectionalRule>,
    ambiguous: Vec<AmbiguousRule>,
    indicators: HashMap<String, Gender>,
    rules: HashMap<String, Rule>,
    resolver: Arc<dyn HerResolver>,
}

impl fmt::Debug for GenderLexicon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenderLexicon")
            .field("bidirectional", &self.bidirectional)
            .field("unidirectional", &self.unidirectional)
            .field("ambiguous", &self.ambiguous)
            .finish_non_exhaustive()
    }
}

impl Default for GenderLexicon {
    fn default() -> Self {
        GenderLexicon::from_tsv(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

fn parse_gender(s: &str, line: usize) -> Result<Gender> {
    match s {
        "male" => Ok(Gender::Male),
        "female" => Ok(Gender::Female),
        other => Err(Error::Lexicon(format!(
            "line {line}: source_gender must be male or female, got '{other}'"
        ))),
    }
}

impl GenderLexicon {
    /// The bundled lexicon, as TSV text.
    pub fn default_tsv() -> &'static str {
        DEFAULT_LEXICON
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }

    /// Parse `source<TAB>source_gender<TAB>target<TAB>rule_kind` rows.
    /// Blank lines and `#` comments are ignored.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut bidirectional = Vec::new();
        let mut unidirectional = Vec::new();
        let mut ambiguous = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Lexicon(format!(
                    "line {line}: expected 4 tab-separated columns, got {}",
                    cols.len()
                )));
            }
            let source = cols[0].to_lowercase();
            let gender = parse_gender(cols[1], line)?;
            let target = cols[2].to_lowercase();
            let kind = RuleKind::parse(cols[3]).ok_or_else(|| {
                Error::Lexicon(format!("line {line}: unknown rule kind '{}'", cols[3]))
            })?;
            match kind {
                RuleKind::Bidirectional => {
                    let pair = match gender {
                        Gender::Male => (source, target),
                        _ => (target, source),
                    };
                    bidirectional.push(pair);
                }
                RuleKind::Unidirectional => unidirectional.push(UnidirectionalRule {
                    source,
                    source_gender: gender,
                    target,
                }),
                RuleKind::Ambiguous => {
                    let options: Vec<&str> = target.split('|').collect();
                    if options.len() != 2 {
                        return Err(Error::Lexicon(format!(
                            "line {line}: ambiguous target must be 'possessive|objective'"
                        )));
                    }
                    ambiguous.push(AmbiguousRule {
                        source,
                        source_gender: gender,
                        possessive_target: options[0].to_string(),
                        objective_target: options[1].to_string(),
                    });
                }
            }
        }
        Self::new(bidirectional, unidirectional, ambiguous)
    }

    /// Build from rule lists; `bidirectional` pairs are `(male, female)`.
    pub fn new(
        bidirectional: Vec<(String, String)>,
        unidirectional: Vec<UnidirectionalRule>,
        ambiguous: Vec<AmbiguousRule>,
    ) -> Result<Self> {
        let mut indicators = HashMap::new();
        let mut rules = HashMap::new();
        let mut add_source = |token: &str, gender: Gender, rule: Rule| -> Result<()> {
            if token.is_empty() {
                return Err(Error::Lexicon("empty token".into()));
            }
            if rules.insert(token.to_string(), rule).is_some() {
                return Err(Error::Lexicon(format!(
                    "token '{token}' appears as a source in more than one rule"
                )));
            }
            indicators.insert(token.to_string(), gender);
            Ok(())
        };
        for (male, female) in &bidirectional {
            add_source(male, Gender::Male, Rule::Fixed(female.clone()))?;
            add_source(female, Gender::Female, Rule::Fixed(male.clone()))?;
        }
        for r in &unidirectional {
            add_source(&r.source, r.source_gender, Rule::Fixed(r.target.clone()))?;
        }
        for r in &ambiguous {
            add_source(
                &r.source,
                r.source_gender,
                Rule::Ambiguous {
                    possessive: r.possessive_target.clone(),
                    objective: r.objective_target.clone(),
                },
            )?;
        }

        // Targets must never carry the source's own gender.
        for (source, rule) in &rules {
            let gender = indicators[source];
            let targets: Vec<&String> = match rule {
                Rule::Fixed(t) => vec![t],
                Rule::Ambiguous {
                    possessive,
                    objective,
                } => vec![possessive, objective],
            };
            for t in targets {
                if indicators.get(t.as_str()) == Some(&gender) {
                    return Err(Error::Lexicon(format!(
                        "rule '{source}' -> '{t}' maps to the same gender ({gender})"
                    )));
                }
            }
        }

        Ok(GenderLexicon {
            bidirectional,
            unidirectional,
            ambiguous,
            indicators,
            rules,
            resolver: Arc::new(StoplistResolver::default()),
        })
    }

    /// Replace the resolver used to choose between the targets of ambiguous rules.
    pub fn with_resolver(mut self, resolver: Arc<dyn HerResolver>) -> Self {
        self.resolver = resolver;
        self
    }

    pub fn resolver(&self) -> &dyn HerResolver {
        self.resolver.as_ref()
    }

    pub fn bidirectional_pairs(&self) -> &[(String, String)] {
        &self.bidirectional
    }

    pub fn unidirectional_rules(&self) -> &[UnidirectionalRule] {
        &self.unidirectional
    }

    pub fn ambiguous_rules(&self) -> &[AmbiguousRule] {
        &self.ambiguous
    }

    /// Gender carried by a (lowercase) token, if it is an indicator.
    pub fn gender_of(&self, token: &str) -> Option<Gender> {
        self.indicators.get(token).copied()
    }

    pub(crate) fn rule(&self, token: &str) -> Option<&Rule> {
        self.rules.get(token)
    }

    /// Indicator tokens for one gender, sorted.
    pub fn indicator_set(&self, gender: Gender) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .indicators
            .iter()
            .filter(|(_, g)| **g == gender)
            .map(|(t, _)| t.as_str())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn is_indicator(&self, token: &str) -> bool {
        self.indicators.contains_key(token)
    }
}
