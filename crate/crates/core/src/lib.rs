//! Build and query a probabilistic knowledge base of similes.

pub mod classifier;
pub mod components;
pub mod config;
pub mod cotrain;
pub mod error;
pub mod eval;
pub mod explain;
pub mod inference;
pub mod kb;
pub mod pattern;
pub mod pipeline;
pub mod properties;
pub mod stats;
pub mod text;
pub mod treebank;

pub use error::{Error, Result};
