//! Answer-string normalization shared by the matcher and the corpus filter.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_ARTICLES: &[&str] = &["the", "la", "le", "el", "il", "der", "die", "das"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalizer {
    /// Leading tokens dropped while more than one token remains.
    pub articles: Vec<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            articles: DEFAULT_ARTICLES.iter().map(|a| a.to_string()).collect(),
        }
    }
}

impl Normalizer {
    pub fn new<I, S>(articles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Normalizer {
            articles: articles
                .into_iter()
                .map(|a| fold(a.as_ref()))
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }

    /// NFKC, casefold, punctuation stripped at token edges, whitespace
    /// collapsed, leading articles removed.
    pub fn normalize(&self, text: &str) -> String {
        let folded = fold(text);
        let mut tokens: Vec<&str> = folded
            .split_whitespace()
            .map(|t| t.trim_matches(is_punctuation))
            .filter(|t| !t.is_empty())
            .collect();
        let mut skip = 0;
        while tokens.len() - skip > 1 && self.articles.iter().any(|a| a == tokens[skip]) {
            skip += 1;
        }
        tokens.drain(..skip);
        tokens.join(" ")
    }
}

/// Normalize with the default article list.
pub fn normalize(text: &str) -> String {
    thread_local! {
        static DEFAULT: Normalizer = Normalizer::default();
    }
    DEFAULT.with(|n| n.normalize(text))
}

fn fold(text: &str) -> String {
    // Lowercasing can produce sequences that NFKC recomposes, so fold twice.
    let once: String = text.nfkc().collect::<String>().to_lowercase();
    once.nfkc().collect::<String>().to_lowercase()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{00A1}' // ¡
            | '\u{00A7}'
            | '\u{00AB}' // «
            | '\u{00B6}'
            | '\u{00B7}'
            | '\u{00BB}' // »
            | '\u{00BF}' // ¿
            | '\u{0964}' // danda
            | '\u{0965}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{300C}'..='\u{300F}'
            | '\u{FF01}'..='\u{FF0F}'
        )
}
