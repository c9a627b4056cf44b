//! Descriptive-sentence corpora for image-caption robustness checks.
//!
//! Instead of jailbreak sentences, these corpora describe object classes:
//! a targeted corpus pushes the image toward one class, an untargeted one
//! spreads likelihood over many classes to wash the true label out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::ImageTensor;
use crate::visual::{Corpus, CorpusKind};

/// Whether the corpus names one class or many.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessMode {
    Targeted,
    Untargeted,
}

/// Standard corpus size for robustness runs.
pub const DEFAULT_ROBUSTNESS_M: usize = 30;

/// Everyday object classes; the first three are in the toy vocabulary so
/// desk-scale decode checks can see them.
pub const DEFAULT_CLASS_POOL: [&str; 30] = [
    "horse", "dolphin", "puppy", "kitten", "rabbit", "sparrow", "turtle", "goldfish", "hamster",
    "parrot", "fox", "deer", "duck", "frog", "owl", "sheep", "goat", "pig", "cow", "donkey",
    "squirrel", "hedgehog", "otter", "seal", "penguin", "swan", "crow", "pigeon", "lizard",
    "snail",
];

const SENTENCE_FORMS: [(&str, &str); 6] = [
    ("A photo of a ", "."),
    ("A picture of a ", "."),
    ("This image shows a ", "."),
    ("A close-up photo of a ", "."),
    ("The picture is of a ", "."),
    ("An image with a ", " in it."),
];

const SIZE_WORDS: [&str; 5] = ["", "small ", "big ", "young ", "tiny "];

/// The i-th descriptive sentence for a class. Cycling sentence forms and
/// size words gives 30 distinct sentences before any repeat.
fn describe(class: &str, i: usize) -> String {
    let (prefix, suffix) = SENTENCE_FORMS[i % SENTENCE_FORMS.len()];
    let size = SIZE_WORDS[(i / SENTENCE_FORMS.len()) % SIZE_WORDS.len()];
    format!("{prefix}{size}{class}{suffix}")
}

/// Builds a robustness corpus of `m` sentences.
///
/// Targeted: every sentence describes `target_class`. Untargeted: the
/// first `m` pool classes get one sentence each, so the pool must hold at
/// least `m` distinct classes.
pub fn build_robustness_corpus<S: AsRef<str>>(
    mode: RobustnessMode,
    target_class: &str,
    class_pool: &[S],
    m: usize,
) -> Result<Corpus> {
    if m == 0 {
        return Err(Error::invalid("m", "corpus size must be at least 1"));
    }
    match mode {
        RobustnessMode::Targeted => {
            if target_class.trim().is_empty() {
                return Err(Error::invalid(
                    "target_class",
                    "targeted mode needs a class",
                ));
            }
            let sentences = (0..m).map(|i| describe(target_class, i)).collect();
            Corpus::new(
                format!("robustness_targeted({target_class},m={m})"),
                CorpusKind::RobustnessTargeted,
                sentences,
            )
        }
        RobustnessMode::Untargeted => {
            if class_pool.len() < m {
                return Err(Error::invalid(
                    "class_pool",
                    format!("need at least {m} classes, got {}", class_pool.len()),
                ));
            }
            let chosen: Vec<&str> = class_pool[..m].iter().map(AsRef::as_ref).collect();
            let distinct: HashSet<&str> = chosen.iter().copied().collect();
            if distinct.len() != chosen.len() {
                return Err(Error::invalid("class_pool", "classes must be distinct"));
            }
            let sentences = chosen
                .iter()
                .enumerate()
                .map(|(i, class)| describe(class, i))
                .collect();
            Corpus::new(
                format!("robustness_untargeted(m={m})"),
                CorpusKind::RobustnessUntargeted,
                sentences,
            )
        }
    }
}

/// Desk-scale success check for a targeted corruption: the class word
/// shows up in the greedy decode of the empty prompt.
pub fn targeted_success(
    model: &dyn TargetModel,
    image: &ImageTensor,
    target_class: &str,
    max_new_tokens: usize,
) -> Result<bool> {
    let decode = model.generate(image, "", max_new_tokens, 0.0)?;
    Ok(decode.split_whitespace().any(|w| w == target_class))
}

/// Desk-scale success check for an untargeted corruption: the true class
/// word no longer appears in the greedy decode.
pub fn untargeted_success(
    model: &dyn TargetModel,
    image: &ImageTensor,
    true_class: &str,
    max_new_tokens: usize,
) -> Result<bool> {
    let decode = model.generate(image, "", max_new_tokens, 0.0)?;
    Ok(!decode.split_whitespace().any(|w| w == true_class))
}
