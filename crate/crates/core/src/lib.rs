//! Socially grounded masked language modeling.
//!
//! Contexts such as years or cities are placed in a graph, embedded with
//! node2vec, and fed as one extra frozen input vector to a small BERT-style
//! encoder. Plain and control-token baselines share the same encoder.

pub mod context_graph;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fsutil;
pub mod node2vec;
pub mod plot;

pub use error::{Error, Result};
