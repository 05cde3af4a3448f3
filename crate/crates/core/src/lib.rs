//! Near-duplicate detection for large, noisy text corpora.
//!
//! Four method families share one similarity-graph and evaluation layer:
//!
//! * exact word N-gram overlap via an inverted index ([`overlap`]),
//! * MinHash with collision-count or banded LSH ([`sketch`]),
//! * cosine range search over precomputed embeddings ([`embedspace`]),
//! * re-ranking of embedding candidates with a pluggable pair scorer
//!   ([`pipeline`]).
//!
//! Edges become a [`graph::SimilarityGraph`], which is partitioned by
//! connected components or Louvain community detection and scored against
//! gold clusters with [`evalkit`]. [`synthgen`] produces labeled corpora with
//! OCR-style noise for testing and benchmarking.
//!
//! Data-parallel stages use rayon when the `parallel` feature is on (the
//! default) and run sequentially otherwise; outputs are identical either way.

pub mod corpus;
pub mod embedspace;
pub mod error;
pub mod evalkit;
pub mod graph;
pub mod hash;
pub mod overlap;
pub mod par;
pub mod pipeline;
pub mod sketch;
pub mod synthgen;

pub use error::{Error, Result};
