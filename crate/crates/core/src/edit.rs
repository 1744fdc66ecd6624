//! Word-level edit distance between an LLM hypothesis and a reference, the
//! backtrace of one optimal alignment, and its rendering as revision
//! instructions.
//!
//! The cost matrix uses unit costs for deletion, insertion and substitution:
//!
//! ```text
//! D(i,0) = i
//! D(0,j) = j
//! D(i,j) = D(i-1,j-1)                                   if h_i = r_j
//!        = 1 + min(D(i-1,j), D(i,j-1), D(i-1,j-1))      otherwise
//! ```
//!
//! When several neighbours are optimal the backtrace prefers, in order, a
//! diagonal match, a substitution, a deletion and finally an insertion.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::text::{tokenize, TokenSeq};

/// `(|h|+1) x (|r|+1)` table of prefix edit distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditCostMatrix {
    hyp_len: usize,
    ref_len: usize,
    cells: Vec<u32>,
}

impl EditCostMatrix {
    /// Fills the matrix for any pair of comparable sequences.
    pub fn compute<T: PartialEq>(hyp: &[T], reference: &[T]) -> Self {
        let cols = reference.len() + 1;
        let mut cells = alloc::vec![0u32; (hyp.len() + 1) * cols];
        for (j, cell) in cells[..cols].iter_mut().enumerate() {
            *cell = j as u32;
        }
        for (i, h) in hyp.iter().enumerate() {
            let (prev, cur) = cells[i * cols..(i + 2) * cols].split_at_mut(cols);
            cur[0] = i as u32 + 1;
            for (j, r) in reference.iter().enumerate() {
                cur[j + 1] = if h == r {
                    prev[j]
                } else {
                    1 + prev[j].min(prev[j + 1]).min(cur[j])
                };
            }
        }
        Self {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            cells,
        }
    }

    pub fn hyp_len(&self) -> usize {
        self.hyp_len
    }

    pub fn ref_len(&self) -> usize {
        self.ref_len
    }

    /// `D(i, j)`: edit distance between the first `i` hypothesis tokens and
    /// the first `j` reference tokens.
    ///
    /// # Panics
    ///
    /// When `i > |h|` or `j > |r|`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u32 {
        assert!(
            i <= self.hyp_len && j <= self.ref_len,
            "cell ({i}, {j}) out of range"
        );
        self.cells[i * (self.ref_len + 1) + j]
    }

    /// The full edit distance `D(|h|, |r|)`.
    pub fn distance(&self) -> u32 {
        *self
            .cells
            .last()
            .expect("matrix always has at least one cell")
    }
}

/// Cost matrix between two token sequences.
pub fn cost_matrix(hyp: &[String], reference: &[String]) -> EditCostMatrix {
    EditCostMatrix::compute(hyp, reference)
}

/// One step of an optimal alignment, by position only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignStep {
    Match { hyp: usize, reference: usize },
    Substitute { hyp: usize, reference: usize },
    Delete { hyp: usize },
    Insert { reference: usize },
}

impl AlignStep {
    pub fn is_match(&self) -> bool {
        matches!(self, AlignStep::Match { .. })
    }
}

/// Walks the matrix from the bottom-right corner, reporting steps in
/// right-to-left order. Ties prefer match, then substitution, deletion and
/// insertion.
fn walk<T: PartialEq>(
    matrix: &EditCostMatrix,
    hyp: &[T],
    reference: &[T],
    mut emit: impl FnMut(AlignStep),
) -> Result<(), EditError> {
    if matrix.hyp_len != hyp.len() || matrix.ref_len != reference.len() {
        return Err(EditError::DimensionMismatch {
            matrix: (matrix.hyp_len, matrix.ref_len),
            sequences: (hyp.len(), reference.len()),
        });
    }
    let (mut i, mut j) = (hyp.len(), reference.len());
    while i > 0 || j > 0 {
        let here = matrix.get(i, j);
        if i > 0 && j > 0 && hyp[i - 1] == reference[j - 1] && here == matrix.get(i - 1, j - 1) {
            emit(AlignStep::Match {
                hyp: i - 1,
                reference: j - 1,
            });
            i -= 1;
            j -= 1;
        } else if i > 0
            && j > 0
            && hyp[i - 1] != reference[j - 1]
            && here == matrix.get(i - 1, j - 1) + 1
        {
            emit(AlignStep::Substitute {
                hyp: i - 1,
                reference: j - 1,
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && here == matrix.get(i - 1, j) + 1 {
            emit(AlignStep::Delete { hyp: i - 1 });
            i -= 1;
        } else if j > 0 && here == matrix.get(i, j - 1) + 1 {
            emit(AlignStep::Insert { reference: j - 1 });
            j -= 1;
        } else {
            return Err(EditError::InconsistentMatrix { cell: (i, j) });
        }
    }
    Ok(())
}

/// Recovers one optimal alignment, in left-to-right order.
pub fn align<T: PartialEq>(
    matrix: &EditCostMatrix,
    hyp: &[T],
    reference: &[T],
) -> Result<Vec<AlignStep>, EditError> {
    let mut steps = Vec::with_capacity(hyp.len() + reference.len());
    walk(matrix, hyp, reference, |step| steps.push(step))?;
    steps.reverse();
    Ok(steps)
}

/// One word-level edit operation, carrying the tokens it talks about.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum EditOp {
    Match {
        hyp_index: usize,
        ref_index: usize,
        token: String,
    },
    Substitute {
        hyp_index: usize,
        ref_index: usize,
        from: String,
        to: String,
    },
    Delete {
        hyp_index: usize,
        token: String,
    },
    /// `after` is the reference token just before the insertion point, or
    /// `None` for an insertion at the start of the sentence.
    Insert {
        ref_index: usize,
        token: String,
        after: Option<String>,
    },
}

impl EditOp {
    pub fn is_match(&self) -> bool {
        matches!(self, EditOp::Match { .. })
    }

    /// Hypothesis position consumed by this op, if any.
    pub fn hyp_index(&self) -> Option<usize> {
        match self {
            EditOp::Match { hyp_index, .. }
            | EditOp::Substitute { hyp_index, .. }
            | EditOp::Delete { hyp_index, .. } => Some(*hyp_index),
            EditOp::Insert { .. } => None,
        }
    }
}

/// Ordered edit operations turning a hypothesis into a reference.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EditScript {
    pub ops: Vec<EditOp>,
    /// Number of non-match operations.
    pub cost: usize,
}

/// Revision instructions, one per non-match op of `script`, in order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct FeedbackRecord {
    pub instructions: Vec<String>,
    pub script: EditScript,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EditError {
    /// The matrix was computed for sequences of different lengths.
    DimensionMismatch {
        matrix: (usize, usize),
        sequences: (usize, usize),
    },
    /// No optimal predecessor exists for a cell; the matrix was not produced
    /// from these sequences.
    InconsistentMatrix { cell: (usize, usize) },
    /// The script's hypothesis-side ops do not walk the hypothesis in order.
    ScriptMismatch { position: usize },
}

impl fmt::Display for EditError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditError::DimensionMismatch { matrix, sequences } => write!(
                f,
                "cost matrix is for lengths {matrix:?} but sequences have lengths {sequences:?}"
            ),
            EditError::InconsistentMatrix { cell } => {
                write!(f, "cost matrix has no optimal predecessor at {cell:?}")
            }
            EditError::ScriptMismatch { position } => {
                write!(
                    f,
                    "edit script does not cover hypothesis position {position}"
                )
            }
        }
    }
}

impl core::error::Error for EditError {}

/// Backtraces one optimal edit script from a filled cost matrix.
pub fn backtrace(
    matrix: &EditCostMatrix,
    hyp: &[String],
    reference: &[String],
) -> Result<EditScript, EditError> {
    let anchor = |j: usize| j.checked_sub(1).map(|p| reference[p].clone());
    let mut ops = Vec::with_capacity(hyp.len() + reference.len());
    walk(matrix, hyp, reference, |step| {
        ops.push(match step {
            AlignStep::Match {
                hyp: i,
                reference: j,
            } => EditOp::Match {
                hyp_index: i,
                ref_index: j,
                token: hyp[i].clone(),
            },
            AlignStep::Substitute {
                hyp: i,
                reference: j,
            } => EditOp::Substitute {
                hyp_index: i,
                ref_index: j,
                from: hyp[i].clone(),
                to: reference[j].clone(),
            },
            AlignStep::Delete { hyp: i } => EditOp::Delete {
                hyp_index: i,
                token: hyp[i].clone(),
            },
            AlignStep::Insert { reference: j } => EditOp::Insert {
                ref_index: j,
                token: reference[j].clone(),
                after: anchor(j),
            },
        })
    })?;
    ops.reverse();
    let cost = ops.iter().filter(|op| !op.is_match()).count();
    Ok(EditScript { ops, cost })
}

/// Natural-language instruction for a single op; `None` for matches.
pub fn render_op(op: &EditOp) -> Option<String> {
    match op {
        EditOp::Match { .. } => None,
        EditOp::Delete { token, .. } => Some(format!("\"{token}\" should be deleted.")),
        EditOp::Substitute { from, to, .. } => {
            Some(format!("\"{from}\" should be replaced with \"{to}\"."))
        }
        EditOp::Insert {
            token,
            after: Some(prev),
            ..
        } => Some(format!("\"{token}\" should be inserted after \"{prev}\".")),
        EditOp::Insert {
            token, after: None, ..
        } => Some(format!("\"{token}\" should be inserted at the beginning.")),
    }
}

pub fn render_feedback(script: EditScript) -> FeedbackRecord {
    let instructions = script.ops.iter().filter_map(render_op).collect();
    FeedbackRecord {
        instructions,
        script,
    }
}

/// Replays `script` over `hyp`, producing the reference it was traced against.
pub fn apply_script(hyp: &[String], script: &EditScript) -> Result<TokenSeq, EditError> {
    let mut out = Vec::with_capacity(hyp.len() + script.cost);
    let mut next = 0usize;
    for op in &script.ops {
        if let Some(index) = op.hyp_index() {
            let matches_hyp = match op {
                EditOp::Match { token, .. } | EditOp::Delete { token, .. } => {
                    hyp.get(index) == Some(token)
                }
                EditOp::Substitute { from, .. } => hyp.get(index) == Some(from),
                EditOp::Insert { .. } => true,
            };
            if index != next || !matches_hyp {
                return Err(EditError::ScriptMismatch { position: next });
            }
            next += 1;
        }
        match op {
            EditOp::Match { token, .. } => out.push(token.clone()),
            EditOp::Substitute { to, .. } => out.push(to.clone()),
            EditOp::Insert { token, .. } => out.push(token.clone()),
            EditOp::Delete { .. } => {}
        }
    }
    if next != hyp.len() {
        return Err(EditError::ScriptMismatch { position: next });
    }
    Ok(TokenSeq::from_trusted(out))
}

/// Lowercase-tokenizes both texts, aligns them and renders the instructions.
pub fn generate_feedback(hypothesis: &str, reference: &str) -> FeedbackRecord {
    let hyp = tokenize(hypothesis, true);
    let reference = tokenize(reference, true);
    let matrix = cost_matrix(&hyp, &reference);
    let script = backtrace(&matrix, &hyp, &reference)
        .expect("matrix computed from the same sequences is always consistent");
    render_feedback(script)
}
