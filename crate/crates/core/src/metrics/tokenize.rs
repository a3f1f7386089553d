use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// Whitespace split, then every punctuation or symbol character becomes
    /// its own token.
    #[default]
    Intl,
    Whitespace,
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizeMode::Intl => "intl",
            TokenizeMode::Whitespace => "whitespace",
        })
    }
}

/// Ordered list of non-empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Drops empty strings so the invariant holds for any input.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_punct_or_symbol(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> TokenSequence {
    match mode {
        TokenizeMode::Whitespace => TokenSequence::new(text.split_whitespace()),
        TokenizeMode::Intl => {
            let mut out = Vec::new();
            for chunk in text.split_whitespace() {
                let mut start = 0;
                for (i, c) in chunk.char_indices() {
                    if is_punct_or_symbol(c) {
                        if start < i {
                            out.push(chunk[start..i].to_string());
                        }
                        out.push(c.to_string());
                        start = i + c.len_utf8();
                    }
                }
                if start < chunk.len() {
                    out.push(chunk[start..].to_string());
                }
            }
            TokenSequence(out)
        }
    }
}
