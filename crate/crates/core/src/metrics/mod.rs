//! Corpus BLEU, TER and the length / part-of-speech breakdowns used to
//! compare translation strategies.

use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

mod analysis;
mod bleu;
mod ter;

pub use analysis::{
    length_bucket_bleu, pos_word_accuracy, LengthBucket, PosAccuracy, PosTag, TaggedTokens,
    DEFAULT_LENGTH_EDGES,
};
pub use bleu::{bleu_corpus, bleu_corpus_with, sentence_bleu, BleuStats};
pub use ter::{
    ter, ter_corpus, ter_corpus_with, ter_edits, ter_with, TerEdits, MAX_SHIFT_ITERATIONS,
    MAX_SHIFT_SIZE,
};

use crate::text::{tokenize, TokenSeq};

/// Tokenization switches for metric computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct MetricOptions {
    /// Case-fold before scoring. Off by default.
    pub lowercase: bool,
}

impl MetricOptions {
    pub(crate) fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text, self.lowercase)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricError {
    LengthMismatch {
        hyps: usize,
        refs: usize,
    },
    EmptyCorpus,
    /// Every hypothesis is empty, so no n-gram precision is defined.
    AllHypothesesEmpty,
    EmptyReference {
        index: usize,
    },
    EdgesNotIncreasing,
    TagCountMismatch {
        sentence: usize,
        tokens: usize,
        tags: usize,
    },
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::LengthMismatch { hyps, refs } => {
                write!(f, "{hyps} hypotheses but {refs} references")
            }
            MetricError::EmptyCorpus => f.write_str("corpus is empty"),
            MetricError::AllHypothesesEmpty => f.write_str("all hypotheses are empty"),
            MetricError::EmptyReference { index } => write!(f, "reference {index} is empty"),
            MetricError::EdgesNotIncreasing => {
                f.write_str("bucket edges must be strictly increasing")
            }
            MetricError::TagCountMismatch {
                sentence,
                tokens,
                tags,
            } => write!(f, "sentence {sentence} has {tokens} tokens but {tags} tags"),
        }
    }
}

impl core::error::Error for MetricError {}

/// Scores for one hypothesis/reference pair.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SentenceScore {
    pub index: usize,
    pub bleu: f64,
    pub ter: f64,
    pub ref_len: usize,
}

/// Corpus metrics plus optional breakdowns.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvaluationReport {
    pub bleu: f64,
    /// Percent; may exceed 100.
    pub ter: f64,
    pub sentence_count: usize,
    pub sentences: Vec<SentenceScore>,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub buckets: Option<Vec<LengthBucket>>,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub pos: Option<Vec<PosAccuracy>>,
    /// Reserved for externally computed neural metrics.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub bert_score: Option<f64>,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub comet: Option<f64>,
}

/// Corpus BLEU and TER with per-sentence scores.
pub fn evaluate<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    options: MetricOptions,
) -> Result<EvaluationReport, MetricError> {
    let bleu = bleu_corpus_with(hyps, refs, options)?;
    let ter = ter_corpus_with(hyps, refs, options)?;
    let sentences = hyps
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(index, (h, r))| {
            let hyp = options.tokenize(h.as_ref());
            let reference = options.tokenize(r.as_ref());
            let edits = ter_edits(&hyp, &reference);
            SentenceScore {
                index,
                bleu: BleuStats::from_tokens(&hyp, &reference)
                    .score()
                    .unwrap_or(0.0),
                ter: edits.total() as f64 / reference.len() as f64 * 100.0,
                ref_len: reference.len(),
            }
        })
        .collect();
    Ok(EvaluationReport {
        bleu,
        ter,
        sentence_count: hyps.len(),
        sentences,
        ..EvaluationReport::default()
    })
}

fn check_lengths(hyps: usize, refs: usize) -> Result<(), MetricError> {
    if hyps != refs {
        return Err(MetricError::LengthMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn owned(words: &[&str]) -> Vec<alloc::string::String> {
    words
        .iter()
        .map(|w| alloc::string::String::from(*w))
        .collect()
}
