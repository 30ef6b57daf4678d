//! Training and evaluation toolkit for semantic-aware generative
//! recommendation over semantic-ID sequences.
//!
//! The crate is organised around a small number of subsystems:
//!
//! - [`catalog`]: item universe, deterministic semantic-ID codebook, and the
//!   validity trie used for constrained decoding.
//! - [`synthworld`]: synthetic users, histories, targets, and the business
//!   reward, with known ground truth for every claim checked downstream.
//! - [`judge`]: aspect-level semantic scoring (oracle scorer, reward
//!   utilities, judge-quality metrics, sparse-query selection, cache).
//! - [`aggregator`]: user-conditional importance-weight policy and its
//!   KL-regularized group-based trainer.
//! - [`genpolicy`]: the lightweight autoregressive generator with
//!   trie-constrained sampling, exact log-probabilities, and analytic
//!   gradients for the clipped surrogate.
//! - [`a2po`]: heterogeneous reward standardization, the dual-consistency
//!   coefficient, asymmetric advantage fusion, and the training step.
//! - [`evalkit`]: HR/NDCG metrics, novelty-stratified reports, lift analysis.
//! - [`config`] and [`run`]: experiment configuration and orchestration.

pub mod a2po;
pub mod aggregator;
pub mod catalog;
pub mod config;
pub mod evalkit;
pub mod features;
pub mod genpolicy;
pub mod judge;
pub mod math;
pub mod rngutil;
pub mod run;
pub mod synthworld;
