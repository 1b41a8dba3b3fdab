//! Small discrete-action soft actor-critic learner.

pub mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod sac;

use thiserror::Error;

pub use checkpoint::PolicyCheckpoint;
pub use mlp::{grad_check, mlp_forward, MlpNet};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use sac::{flip_action, ActionMode, SacConfig, SacLearner, SacStats};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("input has {found} values, network expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
