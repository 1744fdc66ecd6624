//! Core algorithms for human-in-the-loop machine translation refinement.
//!
//! This crate is `no_std` (it only needs `alloc`) and holds everything that is
//! a pure function of its inputs:
//!
//! - [`text`]: whitespace tokenization and n-gram counting.
//! - [`edit`]: word-level edit distance, optimal-path backtrace and the
//!   rendering of an edit script into natural-language revision instructions.
//! - [`retrieval`]: Okapi BM25 over demonstration sources plus the n-gram
//!   recall rerank used to pick in-context demonstrations.
//! - [`metrics`]: corpus BLEU, TER with greedy block shifts, sentence-length
//!   buckets and per-POS word accuracy.
//!
//! IO, persistence, the LLM gateway and the HTTP service live in the `hilmt`
//! crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod edit;
pub mod metrics;
pub mod retrieval;
pub mod text;

pub use edit::{
    apply_script, backtrace, generate_feedback, render_feedback, EditCostMatrix, EditError, EditOp,
    EditScript, FeedbackRecord,
};
pub use retrieval::{
    recall_score, Bm25Params, RetrievalConfig, RetrievalError, RetrievalIndex, RetrievalMethod,
    ScoredDemo,
};
pub use text::{ngrams, tokenize, NgramCounts, TextError, TokenSeq};
