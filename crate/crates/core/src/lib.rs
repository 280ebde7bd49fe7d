//! Directed homophily-aware graph neural network.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: directed CSR storage, dataset ingestion, and homophily diagnostics.
//! - [`tensor`]: dense `f64` matrices with a reverse-mode tape and a finite-difference checker.
//! - [`model`]: the two gated directional encoders and the noise-tolerant fusion head.
//! - [`objective`]: focal / cross-entropy / importance / branch losses and their composition.
//! - [`train`]: configuration, initialisation, AdamW, splits, synthetic data, and training loops.
//! - [`checkpoint`]: flat binary parameter snapshots.
//! - [`cli`]: the `dhgnn` command-line front end.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod graph;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{DirectedGraph, Direction, LabeledDataset};
pub use tensor::{Matrix, Tape, Var};
