//! Explanation regeneration as learning to rank: corpus loading, training
//! data preparation, lexical or external relevance scores, iterative
//! weighted re-ranking and mean-average-precision evaluation.

pub mod cli;
pub mod corpus;
pub mod dataprep;
pub mod error;
pub mod eval;
pub mod rerank;
pub mod scorer;
pub mod textsim;

pub use error::{Error, Result};
