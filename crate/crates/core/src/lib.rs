//! Legal case retrieval with latent legal indicators.
//!
//! The pipeline runs in two stages. First a query is mapped to a latent legal
//! structure (a charge plus its constitutive elements) by an indicator source,
//! either an external generator ingested from file or the built-in
//! hierarchical probabilistic generator. Second, every candidate in the query's
//! pool gets a five-dimensional evidence vector (generator confidences,
//! structural overlap with the candidate's labels, per-query normalized BM25)
//! which a small MLP fuses into a relevance score.
//!
//! Around the pipeline sits the experimental harness: TREC-style metrics, a
//! paired randomization test, feature ablations, exact Shapley attribution and
//! stratified data-efficiency sweeps.
//!
//! Data-parallel loops (per-query ranking and evaluation, per-instance
//! attribution) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and plain iterators otherwise.

pub mod corpus;
pub mod distill;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod inference;
pub mod lexical;
pub mod par;
pub mod rng;
pub mod scorer;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
