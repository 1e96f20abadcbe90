use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Offline token estimates. Neither matches a real model's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Runs of word characters plus each punctuation character.
    WordPunct,
    /// One token per four characters, rounded up.
    CharQuad,
}

pub fn count_tokens(text: &str, tok: Tokenizer) -> usize {
    match tok {
        Tokenizer::WordPunct => {
            static RE: OnceLock<Regex> = OnceLock::new();
            RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").unwrap()).find_iter(text).count()
        }
        Tokenizer::CharQuad => text.chars().count().div_ceil(4),
    }
}
