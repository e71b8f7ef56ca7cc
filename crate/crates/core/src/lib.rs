//! Group-relative policy optimization with conditional ground-truth injection,
//! on a tabular sequence policy.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajectory`]: sequences, groups and group-relative advantages.
//! - [`policy`]: tabular softmax policy, exact log-probabilities, KL and gradients.
//! - [`verifier`]: similarity scorers, the binarizer and the scoring front-end.
//! - [`engine`]: the clipped, KL-regularized objective and the training step.
//! - [`taskgen`]: synthetic tasks and the retention metric.
//! - [`harness`]: experiment configs, multi-seed runs and comparison reports.

pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod harness;
pub mod optim;
pub mod policy;
#[cfg(feature = "remote")]
pub mod remote;
pub mod taskgen;
pub mod trajectory;
pub mod verifier;

pub use engine::{train_step, TrainConfig, TrainState, Variant};
pub use error::{Error, Result};
pub use policy::{PolicyParams, Shape};
pub use trajectory::{compute_advantages, Prompt, TokenSeq, Trajectory, TrajectoryGroup};
pub use verifier::{BinarizerSpec, ScorerKind, ScorerSpec, Verifier};
