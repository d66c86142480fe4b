//! Out-of-distribution detection lab: a small reverse-mode autodiff MLP trained
//! with cross-entropy, label smoothing or adaptive label smoothing, eight
//! post-hoc knownness scores, and open-set evaluation metrics.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scores;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
