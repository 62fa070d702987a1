//! Weakly supervised aspect extraction with a hyperbolic aspect classifier
//! and disentangled seed-word semantics.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod diffgraph;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kv;
pub mod model;
pub mod training;

pub use error::{Error, Result};
