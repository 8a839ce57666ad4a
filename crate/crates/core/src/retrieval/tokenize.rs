use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Whitespace-delimited words (eojeol for Korean).
    Whitespace,
    /// Character n-grams of each word only.
    CharNgram,
    /// Words followed by the character n-grams of each word.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub ngram_size: usize,
    pub lowercase_latin: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            mode: TokenizerMode::Hybrid,
            ngram_size: 2,
            lowercase_latin: true,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_size == 0 {
            return Err(Error::Config("tokenizer.ngram_size must be >= 1".into()));
        }
        Ok(())
    }
}

fn is_latin(c: char) -> bool {
    c.is_ascii() || ('\u{00C0}'..='\u{024F}').contains(&c)
}

fn fold_case(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    for c in word.chars() {
        if is_latin(c) {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

fn push_ngrams(word: &str, n: usize, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= n {
        out.push(word.to_string());
        return;
    }
    out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
}

/// Splits NFC-normalized text into index terms.
///
/// Words are whitespace-separated runs with leading and trailing
/// punctuation stripped. A word no longer than `ngram_size` characters is its
/// own single n-gram.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    let n = config.ngram_size.max(1);
    let mut tokens = Vec::new();
    for raw in normalized.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            continue;
        }
        let word = if config.lowercase_latin {
            fold_case(trimmed)
        } else {
            trimmed.to_string()
        };
        match config.mode {
            TokenizerMode::Whitespace => tokens.push(word),
            TokenizerMode::CharNgram => push_ngrams(&word, n, &mut tokens),
            TokenizerMode::Hybrid => {
                tokens.push(word.clone());
                push_ngrams(&word, n, &mut tokens);
            }
        }
    }
    tokens
}
