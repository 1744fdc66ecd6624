//! Breakdowns by reference sentence length and by part-of-speech tag.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use super::bleu::BleuStats;
use super::{MetricError, MetricOptions};
use crate::text::{tokenize, TokenSeq};

/// Bucket edges `<10, [10,20), ..., [50,60), >=60`.
pub const DEFAULT_LENGTH_EDGES: [usize; 6] = [10, 20, 30, 40, 50, 60];

/// BLEU for the sentences whose reference length falls in `[lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LengthBucket {
    pub label: String,
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    pub sentences: usize,
    pub bleu: f64,
}

fn bucket_bounds(edges: &[usize], bucket: usize) -> (Option<usize>, Option<usize>) {
    let lower = bucket.checked_sub(1).map(|i| edges[i]);
    let upper = edges.get(bucket).copied();
    (lower, upper)
}

fn bucket_label(lower: Option<usize>, upper: Option<usize>) -> String {
    match (lower, upper) {
        (None, Some(u)) => format!("<{u}"),
        (Some(l), Some(u)) => format!("[{l},{u})"),
        (Some(l), None) => format!(">={l}"),
        (None, None) => String::from("all"),
    }
}

/// Groups pairs by reference token length and scores each non-empty group
/// with corpus BLEU. `edges` must be strictly increasing; `n` edges make
/// `n + 1` buckets.
pub fn length_bucket_bleu<H: AsRef<str>, R: AsRef<str>>(
    pairs: &[(H, R)],
    edges: &[usize],
    options: MetricOptions,
) -> Result<Vec<LengthBucket>, MetricError> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::EdgesNotIncreasing);
    }
    let mut stats = vec![(0usize, BleuStats::default()); edges.len() + 1];
    for (h, r) in pairs {
        let hyp = options.tokenize(h.as_ref());
        let reference = options.tokenize(r.as_ref());
        let bucket = edges.partition_point(|&e| e <= reference.len());
        stats[bucket].0 += 1;
        stats[bucket]
            .1
            .add(&BleuStats::from_tokens(&hyp, &reference));
    }
    Ok(stats
        .into_iter()
        .enumerate()
        .filter(|(_, (count, _))| *count > 0)
        .map(|(bucket, (sentences, s))| {
            let (lower, upper) = bucket_bounds(edges, bucket);
            LengthBucket {
                label: bucket_label(lower, upper),
                lower,
                upper,
                sentences,
                bleu: s.score().unwrap_or(0.0),
            }
        })
        .collect())
}

/// Penn Treebank tags broken out in the analysis; everything else is `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum PosTag {
    CC,
    DT,
    IN,
    JJ,
    NN,
    NNP,
    NNS,
    PRP,
    RB,
    TO,
    VB,
    VBP,
    VBZ,
    #[cfg_attr(feature = "serde", serde(rename = "other"))]
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 14] = [
        PosTag::CC,
        PosTag::DT,
        PosTag::IN,
        PosTag::JJ,
        PosTag::NN,
        PosTag::NNP,
        PosTag::NNS,
        PosTag::PRP,
        PosTag::RB,
        PosTag::TO,
        PosTag::VB,
        PosTag::VBP,
        PosTag::VBZ,
        PosTag::Other,
    ];

    /// Maps a tagger label; unknown labels become [`PosTag::Other`].
    pub fn from_label(label: &str) -> Self {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == label)
            .unwrap_or(PosTag::Other)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PosTag::CC => "CC",
            PosTag::DT => "DT",
            PosTag::IN => "IN",
            PosTag::JJ => "JJ",
            PosTag::NN => "NN",
            PosTag::NNP => "NNP",
            PosTag::NNS => "NNS",
            PosTag::PRP => "PRP",
            PosTag::RB => "RB",
            PosTag::TO => "TO",
            PosTag::VB => "VB",
            PosTag::VBP => "VBP",
            PosTag::VBZ => "VBZ",
            PosTag::Other => "other",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tagged reference sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedTokens {
    tokens: TokenSeq,
    tags: Vec<PosTag>,
}

impl TaggedTokens {
    pub fn new(tokens: TokenSeq, tags: Vec<PosTag>) -> Result<Self, MetricError> {
        if tokens.len() != tags.len() {
            return Err(MetricError::TagCountMismatch {
                sentence: 0,
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        Ok(Self { tokens, tags })
    }

    pub fn tokens(&self) -> &TokenSeq {
        &self.tokens
    }

    pub fn tags(&self) -> &[PosTag] {
        &self.tags
    }
}

/// Word accuracy for one tag.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PosAccuracy {
    pub tag: PosTag,
    pub matched: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Marks the reference positions covered by one longest common subsequence.
fn lcs_matched(reference: &[String], hyp: &[String]) -> Vec<bool> {
    let (n, m) = (reference.len(), hyp.len());
    let mut table = vec![0u32; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            table[at(i, j)] = if reference[i - 1] == hyp[j - 1] {
                table[at(i - 1, j - 1)] + 1
            } else {
                table[at(i - 1, j)].max(table[at(i, j - 1)])
            };
        }
    }
    let mut matched = vec![false; n];
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if reference[i - 1] == hyp[j - 1] && table[at(i, j)] == table[at(i - 1, j - 1)] + 1 {
            matched[i - 1] = true;
            i -= 1;
            j -= 1;
        } else if table[at(i - 1, j)] >= table[at(i, j - 1)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    matched
}

/// Fraction of reference tokens of each tag that the hypothesis reproduces,
/// aligning by case-folded longest common subsequence. Only tags present in
/// the references are reported, in [`PosTag::ALL`] order.
pub fn pos_word_accuracy<H: AsRef<str>>(
    refs: &[TaggedTokens],
    hyps: &[H],
) -> Result<Vec<PosAccuracy>, MetricError> {
    if refs.len() != hyps.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let mut counts: BTreeMap<PosTag, (usize, usize)> = BTreeMap::new();
    for (tagged, hyp) in refs.iter().zip(hyps) {
        let reference: Vec<String> = tagged.tokens.iter().map(|t| t.to_lowercase()).collect();
        let hyp = tokenize(hyp.as_ref(), true);
        let matched = lcs_matched(&reference, &hyp);
        for (tag, hit) in tagged.tags.iter().zip(matched) {
            let entry = counts.entry(*tag).or_insert((0, 0));
            entry.0 += usize::from(hit);
            entry.1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(tag, (matched, total))| PosAccuracy {
            tag,
            matched,
            total,
            accuracy: matched as f64 / total as f64,
        })
        .collect())
}
