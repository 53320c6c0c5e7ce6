//! Few-shot node classification for labels that appear after training.
//!
//! The pipeline learns structure-preserving node embeddings with skip-gram
//! negative sampling, and, from episodic tasks built over the known labels,
//! a self-attention transformation that adapts those embeddings to each
//! task before a two-prototype distance classifier scores query nodes.
//! A staircase-decayed coin decides at every step which of the two
//! objectives is optimized.
//!
//! Entry points: [`train::train`] for optimization, [`eval::evaluate`] for
//! the novel-label protocol, [`cli`] for the command-line surface.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod meta;
pub mod optim;
pub mod proto;
pub mod rng;
pub mod synth;
pub mod task;
pub mod train;
pub mod transform;
mod workers;

pub use error::{Error, Result};
pub use workers::Workers;
