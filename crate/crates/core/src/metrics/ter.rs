//! Translation edit rate with greedy block shifts.
//!
//! Each iteration tries every hypothesis block (up to [`MAX_SHIFT_SIZE`]
//! tokens) that also occurs in the reference, and moves it next to the
//! hypothesis tokens aligned with that reference occurrence. The single shift
//! with the largest drop in word edit distance is applied; ties prefer longer
//! blocks, then earlier blocks, then earlier targets. Search stops when no
//! shift lowers the edit distance or after [`MAX_SHIFT_ITERATIONS`] shifts.
//! Every shift costs one edit.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_lengths, MetricError, MetricOptions};
use crate::edit::{align, AlignStep, EditCostMatrix};

pub const MAX_SHIFT_SIZE: usize = 10;
pub const MAX_SHIFT_ITERATIONS: usize = 20;

/// Edit counts behind a TER score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerEdits {
    pub shifts: usize,
    /// Word edit distance remaining after the shifts.
    pub edit_distance: usize,
}

impl TerEdits {
    pub fn total(&self) -> usize {
        self.shifts + self.edit_distance
    }
}

struct Trace {
    hyp_err: Vec<bool>,
    ref_err: Vec<bool>,
    /// For each reference position, the hypothesis position it is aligned to;
    /// `None` means "before the first hypothesis token".
    ref_to_hyp: Vec<Option<usize>>,
}

fn trace<T: PartialEq>(hyp: &[T], reference: &[T], matrix: &EditCostMatrix) -> Trace {
    let steps = align(matrix, hyp, reference).expect("matrix matches sequences");
    let mut out = Trace {
        hyp_err: vec![true; hyp.len()],
        ref_err: vec![true; reference.len()],
        ref_to_hyp: vec![None; reference.len()],
    };
    let mut last_hyp: Option<usize> = None;
    for step in steps {
        match step {
            AlignStep::Match {
                hyp: i,
                reference: j,
            } => {
                out.hyp_err[i] = false;
                out.ref_err[j] = false;
                out.ref_to_hyp[j] = Some(i);
                last_hyp = Some(i);
            }
            AlignStep::Substitute {
                hyp: i,
                reference: j,
            } => {
                out.ref_to_hyp[j] = Some(i);
                last_hyp = Some(i);
            }
            AlignStep::Delete { hyp: i } => last_hyp = Some(i),
            AlignStep::Insert { reference: j } => out.ref_to_hyp[j] = last_hyp,
        }
    }
    out
}

/// Moves `words[start..start+len]` so that it begins before the token that
/// was at position `target` in the unshifted sequence.
fn perform_shift<T: Clone>(words: &[T], start: usize, len: usize, target: usize) -> Vec<T> {
    let block = &words[start..start + len];
    let mut out = Vec::with_capacity(words.len());
    if target < start {
        out.extend_from_slice(&words[..target]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[target..start]);
        out.extend_from_slice(&words[start + len..]);
    } else if target > start + len {
        out.extend_from_slice(&words[..start]);
        out.extend_from_slice(&words[start + len..target]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[target..]);
    } else {
        // `target` indexes the sequence with the block removed.
        let split = (len + target).min(words.len());
        out.extend_from_slice(&words[..start]);
        out.extend_from_slice(&words[start + len..split]);
        out.extend_from_slice(block);
        out.extend_from_slice(&words[split..]);
    }
    out
}

/// Ranking key of a candidate shift: gain, block length, earlier start,
/// earlier target.
type ShiftKey = (i64, usize, i64, i64);

fn best_shift<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> Option<(ShiftKey, Vec<T>)> {
    let matrix = EditCostMatrix::compute(hyp, reference);
    let current = i64::from(matrix.distance());
    let trace = trace(hyp, reference, &matrix);
    let mut best: Option<(ShiftKey, Vec<T>)> = None;

    for start_h in 0..hyp.len() {
        for start_r in 0..reference.len() {
            let mut len = 0;
            while len < MAX_SHIFT_SIZE
                && start_h + len < hyp.len()
                && start_r + len < reference.len()
                && hyp[start_h + len] == reference[start_r + len]
            {
                len += 1;
                // Only move blocks that are misaligned on both sides.
                if !trace.hyp_err[start_h..start_h + len].iter().any(|&e| e) {
                    continue;
                }
                if !trace.ref_err[start_r..start_r + len].iter().any(|&e| e) {
                    continue;
                }
                if let Some(aligned) = trace.ref_to_hyp[start_r] {
                    if (start_h..start_h + len).contains(&aligned) {
                        continue;
                    }
                }
                let mut previous: Option<usize> = None;
                for offset in 0..=len {
                    // offset 0 stands for the reference token before start_r.
                    let target = if start_r + offset == 0 {
                        0
                    } else {
                        match trace.ref_to_hyp.get(start_r + offset - 1) {
                            Some(aligned) => aligned.map_or(0, |p| p + 1),
                            None => break,
                        }
                    };
                    if previous == Some(target) {
                        continue;
                    }
                    previous = Some(target);
                    let shifted = perform_shift(hyp, start_h, len, target);
                    let gain = current
                        - i64::from(EditCostMatrix::compute(&shifted, reference).distance());
                    let key = (gain, len, -(start_h as i64), -(target as i64));
                    if best.as_ref().map_or(true, |(k, _)| key > *k) {
                        best = Some((key, shifted));
                    }
                }
            }
        }
    }
    best
}

/// Greedy shift search followed by word edit distance.
pub fn ter_edits<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> TerEdits {
    let mut current: Vec<T> = hyp.to_vec();
    let mut shifts = 0;
    for _ in 0..MAX_SHIFT_ITERATIONS {
        match best_shift(&current, reference) {
            Some(((gain, ..), shifted)) if gain > 0 => {
                current = shifted;
                shifts += 1;
            }
            _ => break,
        }
    }
    TerEdits {
        shifts,
        edit_distance: EditCostMatrix::compute(&current, reference).distance() as usize,
    }
}

/// Sentence TER in percent, case-sensitive.
pub fn ter(hyp: &str, reference: &str) -> Result<f64, MetricError> {
    ter_with(hyp, reference, MetricOptions::default())
}

pub fn ter_with(hyp: &str, reference: &str, options: MetricOptions) -> Result<f64, MetricError> {
    let reference = options.tokenize(reference);
    if reference.is_empty() {
        return Err(MetricError::EmptyReference { index: 0 });
    }
    let hyp = options.tokenize(hyp);
    Ok(ter_edits(&hyp, &reference).total() as f64 / reference.len() as f64 * 100.0)
}

/// Corpus TER: total edits over total reference length.
pub fn ter_corpus<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
) -> Result<f64, MetricError> {
    ter_corpus_with(hyps, refs, MetricOptions::default())
}

pub fn ter_corpus_with<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    options: MetricOptions,
) -> Result<f64, MetricError> {
    check_lengths(hyps.len(), refs.len())?;
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (index, (h, r)) in hyps.iter().zip(refs).enumerate() {
        let reference = options.tokenize(r.as_ref());
        if reference.is_empty() {
            return Err(MetricError::EmptyReference { index });
        }
        edits += ter_edits(&options.tokenize(h.as_ref()), &reference).total();
        ref_len += reference.len();
    }
    Ok(edits as f64 / ref_len as f64 * 100.0)
}
