use super::{check_lengths, MetricError, MetricOptions};
use alloc::string::String;

use crate::text::ngrams;

pub const MAX_ORDER: usize = 4;

/// Additive sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BleuStats {
    /// Clipped n-gram matches per order.
    pub matches: [usize; MAX_ORDER],
    /// Hypothesis n-gram counts per order.
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn from_tokens(hyp: &[String], reference: &[String]) -> Self {
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for order in 1..=MAX_ORDER {
            let h = ngrams(hyp, order).expect("order is positive");
            let r = ngrams(reference, order).expect("order is positive");
            stats.matches[order - 1] = h.clipped_overlap(&r);
            stats.totals[order - 1] = h.total();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for k in 0..MAX_ORDER {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in `[0, 100]`. Orders with no hypothesis n-grams are left out of
    /// the geometric mean; an included order without matches gives 0.
    pub fn score(&self) -> Result<f64, MetricError> {
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for k in 0..MAX_ORDER {
            if self.totals[k] == 0 {
                continue;
            }
            if self.matches[k] == 0 {
                return Ok(0.0);
            }
            log_sum += libm::log(self.matches[k] as f64 / self.totals[k] as f64);
            orders += 1;
        }
        if orders == 0 {
            return Err(MetricError::AllHypothesesEmpty);
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity = if c < r { libm::exp(1.0 - r / c) } else { 1.0 };
        Ok(100.0 * brevity * libm::exp(log_sum / orders as f64))
    }
}

/// Corpus BLEU with case-sensitive whitespace tokenization.
pub fn bleu_corpus<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
) -> Result<f64, MetricError> {
    bleu_corpus_with(hyps, refs, MetricOptions::default())
}

pub fn bleu_corpus_with<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    options: MetricOptions,
) -> Result<f64, MetricError> {
    check_lengths(hyps.len(), refs.len())?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        let stats =
            BleuStats::from_tokens(&options.tokenize(h.as_ref()), &options.tokenize(r.as_ref()));
        total.add(&stats);
    }
    total.score()
}

/// BLEU of a single pair, 0 when the hypothesis is empty.
pub fn sentence_bleu(hyp: &str, reference: &str, options: MetricOptions) -> f64 {
    BleuStats::from_tokens(&options.tokenize(hyp), &options.tokenize(reference))
        .score()
        .unwrap_or(0.0)
}
