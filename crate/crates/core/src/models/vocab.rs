//! Word-level vocabulary for the toy target model.
//!
//! Three reserved ids are always present: `<unk>` = 0, `<eos>` = 1,
//! `<pad>` = 2. Everything else is a plain lowercase word. Tokenization is
//! deliberately crude — lowercase, split on whitespace, strip punctuation
//! off the edges — because the toy model only has to be differentiable,
//! not linguistically serious.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const PAD_ID: usize = 2;

pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";

/// The 61 non-reserved words of the default vocabulary, giving a total
/// size of 64. The first 54 are the most frequent words of the built-in
/// adversarial corpus (ties broken by first appearance); the last 7 cover
/// the image-description sentences used by the recognition-robustness
/// checks.
const DEFAULT_WORDS: [&str; 61] = [
    "the",
    "answer",
    "sure",
    "is",
    "here",
    "i",
    "do",
    "not",
    "never",
    "any",
    "a",
    "to",
    "avoid",
    "will",
    "and",
    "with",
    "yes",
    "respond",
    "in",
    "that",
    "question",
    "can",
    "help",
    "response",
    "mention",
    "of",
    "details",
    "certainly",
    "it",
    "are",
    "add",
    "explain",
    "full",
    "guide",
    "request",
    "am",
    "no",
    "what",
    "you",
    "asked",
    "provide",
    "absolutely",
    "course",
    "all",
    "manner",
    "how",
    "refuse",
    "apologize",
    "for",
    "steps",
    "warnings",
    "disclaimer",
    "safety",
    "concerns",
    // image-description words
    "photo",
    "picture",
    "image",
    "shows",
    "horse",
    "dolphin",
    "puppy",
];

/// An id <-> word table with fixed reserved entries.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved words. Words must be nonempty,
    /// lowercase-normalized by the caller, free of whitespace, and unique.
    pub fn with_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut all: Vec<String> = vec![
            UNK_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            PAD_TOKEN.to_string(),
        ];
        let mut index: HashMap<String, usize> = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        for word in words {
            let word = word.as_ref();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("word {word:?} is empty or contains whitespace"),
                ));
            }
            if word != word.to_lowercase() {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("word {word:?} is not lowercase"),
                ));
            }
            if index.contains_key(word) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("duplicate word {word:?}"),
                ));
            }
            index.insert(word.to_string(), all.len());
            all.push(word.to_string());
        }
        Ok(Self { words: all, index })
    }

    /// The frozen 64-token default vocabulary.
    pub fn default_toy() -> Self {
        Self::with_words(&DEFAULT_WORDS).expect("default word list is valid")
    }

    /// Reads one non-reserved word per line; blank lines and `#` comment
    /// lines are skipped.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let words: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::with_words(&words)
    }

    /// Writes the non-reserved words, one per line.
    pub fn to_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let body: String = self.words[3..].iter().map(|w| format!("{w}\n")).collect();
        fs::write(path, body)?;
        Ok(())
    }

    /// Total size including the three reserved ids.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved entries are always present
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Lowercases, splits on whitespace, strips non-alphanumeric edge
    /// characters, and maps out-of-vocabulary words to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.to_lowercase()
            .split_whitespace()
            .filter_map(|raw| {
                let word = raw
                    .trim_start_matches(|c: char| !c.is_alphanumeric())
                    .trim_end_matches(|c: char| !c.is_alphanumeric());
                if word.is_empty() {
                    None
                } else {
                    Some(self.id(word).unwrap_or(UNK_ID))
                }
            })
            .collect()
    }

    /// Space-joins the words for the given ids, stopping silently at the
    /// first `<eos>` and skipping `<pad>`.
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::new();
        for &id in ids {
            if id == EOS_ID {
                break;
            }
            if id == PAD_ID {
                continue;
            }
            match self.token(id) {
                Some(w) => out.push(w),
                None => {
                    return Err(Error::TokenOutOfRange {
                        id,
                        vocab_size: self.len(),
                    })
                }
            }
        }
        Ok(out.join(" "))
    }
}
