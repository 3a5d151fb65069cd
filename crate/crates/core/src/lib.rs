//! Collaborative sampling for implicit-feedback recommendation.
//!
//! A learnable graph-propagation sampler proposes candidate items for each
//! user through adaptive random walks on the user–item interaction graph.
//! It is trained jointly with a matrix-factorization recommender: the
//! recommender fits observed positives against sampled candidates, and the
//! sampler follows a policy gradient whose reward is the recommender's
//! log-probability of rejecting each draw. Predictions multiply the two.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alias;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod optim;
pub mod recommender;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
