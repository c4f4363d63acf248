//! Gene-set enrichment analysis with the maxmean statistic and
//! restandardized permutation inference.

pub mod cli;
pub mod data_model;
pub mod error;
pub mod gene_scores;
pub mod inference;
pub mod numerics;
pub mod selection_model;
pub mod set_statistics;
pub mod simulation;

pub use error::{Error, Result};
