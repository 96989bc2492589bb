//! Language-prior feedback training.
//!
//! A two-branch classifier (fused question+visual path and a question-only
//! branch behind a stop-gradient) is trained with a per-sample reweighted
//! cross-entropy whose weights come from the question-only branch's
//! confidence on the true answer. A synthetic changing-priors benchmark
//! measures whether the trained model follows the visual signal or the
//! training answer prior.

pub mod error;
pub mod harness;
pub mod model;
pub mod objectives;
pub mod synthbench;
pub mod tensorcore;

pub use error::{Error, Result};
