//! Tokenization and n-gram counting shared by feedback generation, retrieval
//! and the metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// An ordered sequence of word tokens.
///
/// Tokens are never empty and never contain whitespace. Punctuation stays
/// attached to the word it touches, so `kontact;` is a single token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from pre-split tokens, rejecting empty tokens and
    /// tokens with internal whitespace.
    pub fn new<I, S>(tokens: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for (index, token) in tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(TextError::InvalidToken { index });
            }
        }
        Ok(Self(tokens))
    }

    /// Wraps tokens already known to satisfy the invariants.
    pub(crate) fn from_trusted(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Space-joins the tokens.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a String;
    type IntoIter = core::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Multiset of n-token windows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts {
    order: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NgramCounts {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Occurrences of `gram`; zero when absent.
    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Sum of all counts.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Number of distinct n-grams.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], usize)> {
        self.counts.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    /// Clipped multiset intersection size: `sum(min(self[g], other[g]))`.
    pub fn clipped_overlap(&self, other: &NgramCounts) -> usize {
        self.counts
            .iter()
            .map(|(gram, &count)| count.min(other.get(gram)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextError {
    /// n-gram order must be at least one.
    ZeroOrder,
    /// A token was empty or contained whitespace.
    InvalidToken { index: usize },
}

impl fmt::Display for TextError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextError::ZeroOrder => f.write_str("n-gram order must be positive"),
            TextError::InvalidToken { index } => {
                write!(f, "token {index} is empty or contains whitespace")
            }
        }
    }
}

impl core::error::Error for TextError {}

/// Splits `text` on Unicode whitespace, optionally case-folding each token.
pub fn tokenize(text: &str, lowercase: bool) -> TokenSeq {
    TokenSeq(
        text.split_whitespace()
            .map(|token| {
                if lowercase {
                    token.to_lowercase()
                } else {
                    String::from(token)
                }
            })
            .collect(),
    )
}

/// Counts every window of `n` consecutive tokens.
pub fn ngrams(seq: &[String], n: usize) -> Result<NgramCounts, TextError> {
    if n == 0 {
        return Err(TextError::ZeroOrder);
    }
    let mut counts = BTreeMap::new();
    if seq.len() >= n {
        for window in seq.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    Ok(NgramCounts { order: n, counts })
}
