//! Memorization auditing toolkit.
//!
//! Measures how training decisions (document upweighting, dataset curation)
//! relate to a language model's memorization: per-document memorization
//! metrics from scoring records, train/test randomized comparisons, BM25
//! neighborhood density over snippets, and simulated dataset ablations.

pub mod ablation;
pub mod config;
pub mod corpus;
pub mod density;
pub mod error;
pub mod metrics;
pub mod rct;
pub mod report;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod toy_lm;

pub use error::{Error, Result};
