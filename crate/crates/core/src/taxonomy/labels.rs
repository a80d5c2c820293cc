use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::vocab::{self, VocabMeta};
use crate::error::{Error, Result};
use crate::tensor_io::{read_labels, LabelStream, TokenStream};

/// Where a token sits inside a reconstructed word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionClass {
    /// Starts a word and the next token does not continue it.
    StandaloneWord,
    /// Starts a word that the next token continues.
    WordStart,
    /// Continues a word started earlier.
    WordMiddle,
    #[default]
    Any,
}

/// How to derive one binary label per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSpec {
    /// `predicate` is one of `contains_digit`, `is_all_caps`, `leading_space`,
    /// `is_alpha`, `is_numeric`, `is_punctuation`, `is_whitespace`,
    /// `first_letter:<c>`, `contains:<text>`.
    TokenProperty {
        predicate: String,
        #[serde(default)]
        position: PositionClass,
    },
    /// Token text equal to `token` once leading whitespace is dropped.
    Unigram {
        token: String,
        #[serde(default)]
        position: PositionClass,
    },
    /// The inner label of the previous token in the same document.
    PreviousToken { inner: Box<LabelSpec> },
    /// A precomputed label file aligned with the token stream.
    External { path: PathBuf },
}

/// A named label spec, as stored in a test-suite file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTest {
    pub id: String,
    #[serde(flatten)]
    pub spec: LabelSpec,
}

#[derive(Debug, Clone)]
enum Predicate {
    ContainsDigit,
    AllCaps,
    LeadingSpace,
    Alpha,
    Numeric,
    Punctuation,
    Whitespace,
    FirstLetter(char),
    Contains(String),
}

impl Predicate {
    fn parse(s: &str) -> Result<Self> {
        if let Some(c) = s.strip_prefix("first_letter:") {
            let mut chars = c.chars();
            return match (chars.next(), chars.next()) {
                (Some(ch), None) if ch.is_alphabetic() => Ok(Self::FirstLetter(ch.to_ascii_lowercase())),
                _ => Err(Error::Invalid(format!("bad letter in predicate {s:?}"))),
            };
        }
        if let Some(t) = s.strip_prefix("contains:") {
            if t.is_empty() {
                return Err(Error::Invalid("empty text in contains: predicate".into()));
            }
            return Ok(Self::Contains(t.to_string()));
        }
        Ok(match s {
            "contains_digit" => Self::ContainsDigit,
            "is_all_caps" => Self::AllCaps,
            "leading_space" => Self::LeadingSpace,
            "is_alpha" => Self::Alpha,
            "is_numeric" => Self::Numeric,
            "is_punctuation" => Self::Punctuation,
            "is_whitespace" => Self::Whitespace,
            _ => return Err(Error::Invalid(format!("unknown predicate {s:?}"))),
        })
    }

    fn eval(&self, tok: &str) -> bool {
        match self {
            Self::ContainsDigit => vocab::contains_digit(tok),
            Self::AllCaps => vocab::is_all_caps(tok),
            Self::LeadingSpace => vocab::leading_space(tok),
            Self::Alpha => vocab::is_alpha(tok),
            Self::Numeric => vocab::is_numeric(tok),
            Self::Punctuation => vocab::is_punctuation(tok),
            Self::Whitespace => !tok.is_empty() && tok.chars().all(char::is_whitespace),
            Self::FirstLetter(c) => vocab::first_letter(tok) == Some(*c),
            Self::Contains(t) => tok.contains(t.as_str()),
        }
    }
}

impl LabelSpec {
    /// Resolves relative external label paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        match self {
            Self::External { path } if path.is_relative() => *path = base.join(&*path),
            Self::PreviousToken { inner } => inner.resolve_paths(base),
            _ => {}
        }
    }
}

/// Word-start flags for one document: a token starts a word at the document
/// start, when it cannot continue a word (leading whitespace or punctuation),
/// or when the previous token does not end inside a word.
pub fn word_starts(doc: &[u32], vocab: &VocabMeta) -> Result<Vec<bool>> {
    let strs = doc.iter().map(|&t| vocab.get(t)).collect::<Result<Vec<_>>>()?;
    Ok((0..strs.len())
        .map(|i| i == 0 || !vocab::continues_word(strs[i]) || !vocab::ends_in_word(strs[i - 1]))
        .collect())
}

/// Position class of every token of one document.
pub fn position_classes(doc: &[u32], vocab: &VocabMeta) -> Result<Vec<PositionClass>> {
    let starts = word_starts(doc, vocab)?;
    Ok((0..doc.len())
        .map(|i| {
            let next_continues = i + 1 < doc.len() && !starts[i + 1];
            match (starts[i], next_continues) {
                (false, _) => PositionClass::WordMiddle,
                (true, true) => PositionClass::WordStart,
                (true, false) => PositionClass::StandaloneWord,
            }
        })
        .collect())
}

fn position_ok(want: PositionClass, have: PositionClass) -> bool {
    want == PositionClass::Any || want == have
}

/// One label per token of `tokens`, documents concatenated.
pub fn generate_labels(spec: &LabelSpec, tokens: &TokenStream, vocab: &VocabMeta) -> Result<LabelStream> {
    let mut out = Vec::with_capacity(tokens.total_tokens());
    match spec {
        LabelSpec::External { path } => {
            let labels = read_labels(path)?;
            if labels.len() != tokens.total_tokens() {
                return Err(Error::Shape(format!(
                    "label file {} has {} labels for {} tokens",
                    path.display(),
                    labels.len(),
                    tokens.total_tokens()
                )));
            }
            return Ok(labels);
        }
        LabelSpec::PreviousToken { inner } => {
            let inner = generate_labels(inner, tokens, vocab)?;
            let src = inner.as_slice();
            let mut offset = 0;
            for doc in &tokens.documents {
                if !doc.is_empty() {
                    out.push(false);
                    out.extend(src[offset..offset + doc.len() - 1].iter().map(|&l| l == 1));
                }
                offset += doc.len();
            }
        }
        LabelSpec::TokenProperty { predicate, position } => {
            let pred = Predicate::parse(predicate)?;
            for doc in &tokens.documents {
                let classes = classes_if_needed(*position, doc, vocab)?;
                for (i, &t) in doc.iter().enumerate() {
                    let here = classes.as_ref().map_or(PositionClass::Any, |c| c[i]);
                    out.push(pred.eval(vocab.get(t)?) && position_ok(*position, here));
                }
            }
        }
        LabelSpec::Unigram { token, position } => {
            let ids = vocab.ids_of(token);
            if ids.is_empty() {
                return Err(Error::Invalid(format!("unigram {token:?} is not in the vocabulary")));
            }
            for doc in &tokens.documents {
                let classes = classes_if_needed(*position, doc, vocab)?;
                for (i, &t) in doc.iter().enumerate() {
                    let here = classes.as_ref().map_or(PositionClass::Any, |c| c[i]);
                    out.push(ids.contains(&t) && position_ok(*position, here));
                }
            }
        }
    }
    Ok(LabelStream::from_bools(out))
}

fn classes_if_needed(want: PositionClass, doc: &[u32], vocab: &VocabMeta) -> Result<Option<Vec<PositionClass>>> {
    if want == PositionClass::Any {
        Ok(None)
    } else {
        position_classes(doc, vocab).map(Some)
    }
}

/// A representative explanation suite: the alphabet in three word positions,
/// digit, caps and punctuation properties, the `top_k` most frequent word
/// unigrams of `tokens`, and previous-token variants of the punctuation and
/// newline tests.
pub fn generate_suite(vocab: &VocabMeta, tokens: &TokenStream, top_k: usize) -> Vec<LabelTest> {
    let mut suite = Vec::new();
    let prop = |predicate: &str, position| LabelSpec::TokenProperty {
        predicate: predicate.into(),
        position,
    };
    for c in 'a'..='z' {
        for (name, pos) in [
            ("standalone", PositionClass::StandaloneWord),
            ("start", PositionClass::WordStart),
            ("middle", PositionClass::WordMiddle),
        ] {
            suite.push(LabelTest {
                id: format!("letter_{c}_{name}"),
                spec: prop(&format!("first_letter:{c}"), pos),
            });
        }
    }
    for p in [
        "contains_digit",
        "is_numeric",
        "is_all_caps",
        "is_alpha",
        "leading_space",
        "is_punctuation",
        "is_whitespace",
    ] {
        suite.push(LabelTest {
            id: p.to_string(),
            spec: prop(p, PositionClass::Any),
        });
    }
    let mut previous = Vec::new();
    for (name, text) in [
        ("comma", ","),
        ("period", "."),
        ("colon", ":"),
        ("semicolon", ";"),
        ("quote", "\""),
        ("apostrophe", "'"),
        ("paren", "("),
        ("hyphen", "-"),
        ("newline", "\n"),
    ] {
        let spec = prop(&format!("contains:{text}"), PositionClass::Any);
        suite.push(LabelTest {
            id: format!("contains_{name}"),
            spec: spec.clone(),
        });
        previous.push(LabelTest {
            id: format!("prev_contains_{name}"),
            spec: LabelSpec::PreviousToken { inner: Box::new(spec) },
        });
    }
    suite.append(&mut previous);

    let mut counts = vec![0usize; vocab.len()];
    for t in tokens.flat_tokens() {
        if let Some(c) = counts.get_mut(t as usize) {
            *c += 1;
        }
    }
    let mut words: Vec<(usize, String)> = Vec::new();
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    for (id, &c) in counts.iter().enumerate() {
        let w = vocab.tokens[id].trim_start();
        if c > 0 && vocab::is_alpha(w) {
            *seen.entry(w.to_string()).or_default() += c;
        }
    }
    words.extend(seen.into_iter().map(|(w, c)| (c, w)));
    // Most frequent first, ties alphabetical.
    words.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for (_, w) in words.into_iter().take(top_k) {
        suite.push(LabelTest {
            id: format!("unigram_{w}"),
            spec: LabelSpec::Unigram {
                token: w.clone(),
                position: PositionClass::Any,
            },
        });
        suite.push(LabelTest {
            id: format!("prev_unigram_{w}"),
            spec: LabelSpec::PreviousToken {
                inner: Box::new(LabelSpec::Unigram {
                    token: w,
                    position: PositionClass::Any,
                }),
            },
        });
    }
    suite
}
