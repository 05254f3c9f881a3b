//! Code-change pre-training toolkit: commit corpus ingestion, diff encoding,
//! data-flow extraction, pre-training sample generation, a small
//! encoder-decoder transformer, downstream task harness and metrics.

pub mod cli;
pub mod corpus;
pub mod dataflow;
pub mod diff;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nngen;
pub mod sampler;
pub mod synthetic;
pub mod tasks;
pub mod tokens;

pub use error::{DiffError, Error, Result};
