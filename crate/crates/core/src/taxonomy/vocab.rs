use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token strings of a vocabulary, indexed by id.
///
/// Byte-level BPE markers are normalized on construction: `Ġ` becomes a
/// space and `Ċ` a newline, so word-boundary rules see plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabMeta {
    pub tokens: Vec<String>,
}

impl VocabMeta {
    pub fn new(tokens: Vec<String>) -> Self {
        let tokens = tokens
            .into_iter()
            .map(|t| t.replace('Ġ', " ").replace('Ċ', "\n"))
            .collect();
        Self { tokens }
    }

    /// Reads `{"tokens": ["...", ...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let meta: VocabMeta = serde_json::from_str(&raw)?;
        Ok(Self::new(meta.tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                d_vocab: self.tokens.len(),
            })
    }

    /// Ids whose text, without leading whitespace, equals `word`.
    pub fn ids_of(&self, word: &str) -> Vec<u32> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.trim_start() == word)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

pub fn leading_space(tok: &str) -> bool {
    tok.starts_with(char::is_whitespace)
}

pub fn contains_digit(tok: &str) -> bool {
    tok.chars().any(|c| c.is_ascii_digit())
}

/// At least one letter and no lowercase letters.
pub fn is_all_caps(tok: &str) -> bool {
    tok.chars().any(char::is_alphabetic) && !tok.chars().any(char::is_lowercase)
}

pub fn is_alpha(tok: &str) -> bool {
    let t = tok.trim_start();
    !t.is_empty() && t.chars().all(char::is_alphabetic)
}

pub fn is_numeric(tok: &str) -> bool {
    let t = tok.trim_start();
    !t.is_empty() && t.chars().all(|c| c.is_ascii_digit())
}

pub fn is_punctuation(tok: &str) -> bool {
    let t = tok.trim_start();
    !t.is_empty() && t.chars().all(|c| c.is_ascii_punctuation())
}

/// First alphabetic character after leading whitespace, lowercased, if the
/// token begins with a letter.
pub fn first_letter(tok: &str) -> Option<char> {
    tok.trim_start()
        .chars()
        .next()
        .filter(|c| c.is_alphabetic())
        .map(|c| c.to_ascii_lowercase())
}

/// Whether a token can continue the word of the token before it: it must
/// start with a letter or digit and carry no leading whitespace.
pub fn continues_word(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_alphanumeric)
}

/// Whether a token ends inside a word, so the next one may continue it.
pub fn ends_in_word(tok: &str) -> bool {
    tok.chars().last().is_some_and(char::is_alphanumeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicates() {
        let digit: Vec<bool> = ["ab", "a1", "9"].iter().map(|t| contains_digit(t)).collect();
        assert_eq!(digit, [false, true, true]);
        assert!(is_all_caps(" NASA") && !is_all_caps("Nasa") && !is_all_caps("42"));
        assert!(is_punctuation(" ,") && !is_punctuation(" "));
        assert_eq!(first_letter(" Apple"), Some('a'));
        assert_eq!(first_letter("1a"), None);
    }

    #[test]
    fn bpe_markers_normalized() {
        let v = VocabMeta::new(vec!["Ġthe".into(), "Ċ".into(), "the".into()]);
        assert_eq!(v.tokens[0], " the");
        assert_eq!(v.tokens[1], "\n");
        assert_eq!(v.ids_of("the"), vec![0, 2]);
    }
}
