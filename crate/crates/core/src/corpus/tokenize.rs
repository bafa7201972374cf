use std::borrow::Cow;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Tokens are maximal runs of alphanumeric characters; whitespace and
    /// punctuation both separate and are dropped.
    #[default]
    WhitespacePunct,
    /// Tokens are maximal runs of non-whitespace characters.
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::WhitespacePunct,
            lowercase: true,
        }
    }
}

fn is_separator(mode: TokenizerMode, c: char) -> bool {
    match mode {
        TokenizerMode::WhitespacePunct => !c.is_alphanumeric(),
        TokenizerMode::Whitespace => c.is_whitespace(),
    }
}

/// Raw token slices of `text`, before case folding.
pub fn token_slices(text: &str, mode: TokenizerMode) -> impl Iterator<Item = &str> + '_ {
    text.split(move |c| is_separator(mode, c))
        .filter(|t| !t.is_empty())
}

/// Tokens of `text` under `cfg`, case-folded when `cfg.lowercase` is set.
pub fn tokenize<'a>(text: &'a str, cfg: &TokenizerConfig) -> Vec<Cow<'a, str>> {
    let lowercase = cfg.lowercase;
    token_slices(text, cfg.mode)
        .map(|t| {
            if lowercase && t.chars().any(char::is_uppercase) {
                Cow::Owned(t.to_lowercase())
            } else {
                Cow::Borrowed(t)
            }
        })
        .collect()
}

/// Number of maximal non-separator runs in `text`.
pub fn count_tokens(text: &str, cfg: &TokenizerConfig) -> usize {
    token_slices(text, cfg.mode).count()
}
