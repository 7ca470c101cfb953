//! Core library for span-rewriting pre-training experiments.
//!
//! The pipeline goes: raw text -> [`corpus`] (tokenize, vocab) -> [`masking`]
//! (sample masked spans) -> [`generators`] (fill spans with imperfect text) ->
//! [`dataset`] (materialize training examples) -> [`curriculum`] (order them
//! by difficulty) -> [`training`] (optimize the [`model`]) -> [`tasks`]
//! (synthetic rewriting benchmarks and metrics).
//!
//! Everything is seeded and deterministic: the same corpus, config, and seed
//! produce byte-identical artifacts regardless of machine or run count.

pub mod corpus;
pub mod curriculum;
pub mod dataset;
mod error;
pub mod generators;
pub mod masking;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod training;

pub use corpus::{TokenSeq, Vocab};
pub use dataset::{Mode, SsrExample};
pub use error::{Error, Result};
pub use masking::{Span, SpanMask};
