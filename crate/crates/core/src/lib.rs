//! Continuously measured qubit: trajectory Monte Carlo, conditioned
//! statistics, tree-level diagrammatic correlators, most-likely paths and
//! feedback.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conditioned;
pub mod correlators;
pub mod diagrams;
pub mod dump;
pub mod error;
pub mod expoly;
pub mod feedback;
pub mod measurement;
pub mod model;
pub mod optimizer;
pub mod quad;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use measurement::{Readout, UpdateScheme};
pub use model::{BlochState, DiagonalFrame, ModelParams};
pub use trajectory::{FeedbackSpec, Trajectory};
