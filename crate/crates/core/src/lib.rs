//! Transducer sequence training at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`lattice`]: alignment-marginal log-probability of a label sequence under a
//!   transducer lattice, its gradient, and a brute-force enumeration reference.
//! - [`decoder`]: prefix-merging beam search producing n-best lists.
//! - [`metrics`]: edit distance, WER, oracle / 1-best selection.
//! - [`objectives`]: EMBR and O-1 losses with per-hypothesis gradient coefficients.
//! - [`model`]: a small recurrent transducer with analytic backprop and checkpoints.
//! - [`corpus`]: reproducible synthetic transduction corpora.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod lattice;
pub mod logmath;
pub mod metrics;
pub mod model;
pub mod objectives;

pub use error::{Error, Result};

/// Index of the blank symbol in every output distribution.
pub const BLANK: usize = 0;
