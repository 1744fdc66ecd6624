//! Human-in-the-loop machine translation refinement.
//!
//! The pipeline drafts a translation with a chat LLM, retrieves revision
//! demonstrations (source, hypothesis, reference and revision instructions)
//! for the same domain, asks the model to polish its draft in the same
//! dialog, and optionally lets the model pick the better of the two. Every
//! reviewed output becomes a new demonstration.
//!
//! The algorithms themselves live in [`hilmt_core`]; this crate adds the
//! demonstration store, the LLM gateway, the orchestration, the review HTTP
//! service and the `hilmt` command line.

pub mod cli;
pub mod formats;
pub mod gateway;
pub mod pipeline;
pub mod service;
pub mod store;

pub use hilmt_core as core;
