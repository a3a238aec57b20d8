//! Possessive vs. objective reading of "her".

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::{token_parts, Token};

const DEFAULT_STOPLIST: &str = include_str!("../../data/her_stoplist.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HerSense {
    /// "her work" -> "his work"
    Possessive,
    /// "saw her." -> "saw him."
    Objective,
}

/// Decides the sense of an ambiguous pronoun at `position` in `tokens`.
///
/// Implement this to plug in an external POS tagger. Closures with the same
/// signature implement it too.
pub trait HerResolver: Send + Sync {
    fn resolve(&self, text: &str, tokens: &[Token<'_>], position: usize) -> HerSense;
}

impl<F> HerResolver for F
where
    F: Fn(&str, &[Token<'_>], usize) -> HerSense + Send + Sync,
{
    fn resolve(&self, text: &str, tokens: &[Token<'_>], position: usize) -> HerSense {
        self(text, tokens, position)
    }
}

/// Stoplist heuristic: "her" is possessive when the next thing in the text is
/// a word outside the stoplist; punctuation, end of text, or a stoplisted
/// word (preposition, conjunction, determiner, auxiliary, common verb,
/// adverb) make it objective.
#[derive(Debug, Clone)]
pub struct StoplistResolver {
    stop: HashSet<String>,
}

impl Default for StoplistResolver {
    fn default() -> Self {
        StoplistResolver::from_list(DEFAULT_STOPLIST)
    }
}

impl StoplistResolver {
    /// One token per line; `#` starts a comment line.
    pub fn from_list(text: &str) -> Self {
        let stop = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        StoplistResolver { stop }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.stop.contains(token)
    }
}

impl HerResolver for StoplistResolver {
    fn resolve(&self, text: &str, tokens: &[Token<'_>], position: usize) -> HerSense {
        let Some(next) = tokens.get(position + 1) else {
            return HerSense::Objective;
        };
        let gap = &text[tokens[position].end..next.start];
        if gap.chars().any(|c| !c.is_whitespace() && c != '"') {
            return HerSense::Objective;
        }
        let (_, stem, _) = token_parts(next.text);
        if stem.is_empty() || self.stop.contains(&stem.to_lowercase()) {
            HerSense::Objective
        } else {
            HerSense::Possessive
        }
    }
}

/// Resolve "her" at `position` with the default stoplist.
pub fn resolve_her(text: &str, tokens: &[Token<'_>], position: usize) -> Result<HerSense> {
    let tok = tokens.get(position).ok_or_else(|| {
        Error::Invalid(format!(
            "position {position} out of range for {} tokens",
            tokens.len()
        ))
    })?;
    let (_, stem, _) = token_parts(tok.text);
    if !stem.eq_ignore_ascii_case("her") {
        return Err(Error::Invalid(format!(
            "token at {position} is '{}', not 'her'",
            tok.text
        )));
    }
    Ok(StoplistResolver::default().resolve(text, tokens, position))
}

#[cfg(test)]
mod tests {
    use super::super::tokenize;
    use super::*;

    fn sense(text: &str) -> HerSense {
        let toks = tokenize(text);
        let pos = toks
            .iter()
            .position(|t| t.text.eq_ignore_ascii_case("her"))
            .unwrap();
        resolve_her(text, &toks, pos).unwrap()
    }

    #[test]
    fn basic_senses() {
        assert_eq!(sense("praised her work"), HerSense::Possessive);
        assert_eq!(sense("I saw her."), HerSense::Objective);
        assert_eq!(sense("told her that it rained"), HerSense::Objective);
        assert_eq!(sense("Her book sold well"), HerSense::Possessive);
        assert_eq!(sense("we met her"), HerSense::Objective);
    }

    #[test]
    fn errors() {
        let toks = tokenize("he met her");
        assert!(resolve_her("he met her", &toks, 0).is_err());
        assert!(resolve_her("he met her", &toks, 9).is_err());
    }
}
