//! Core primitives for routing task queries to skills in large skill pools.
//!
//! Everything here is allocation-only (`no_std` + `alloc`): corpus handling
//! and input flattening, BM25 and dense retrieval, reranking orderings, training
//! data construction, loss functions with analytic gradients, routing metrics
//! and latency statistics. IO, HTTP providers and the command-line surface
//! live in the `skillmux` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod forge;
pub mod latency;
mod math;
pub mod objectives;
pub mod ranking;
pub mod rerank;
pub mod sparse;

pub use corpus::{FieldCaps, InputFormat, Skill, SkillPool, Tier};
pub use error::ProviderError;
pub use ranking::{Ranking, ScoredHit};
