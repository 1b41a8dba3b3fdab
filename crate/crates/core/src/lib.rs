//! Data-driven stochastic neuron simulators and goal-directed reinforcement
//! learning for neuron-connected robots ("Animats").
//!
//! The crate is split along the pipeline:
//!
//! * [`synth_mea`] generates synthetic multi-electrode recordings.
//! * [`spike_pipeline`] turns event files into evoked samples, separates
//!   burst from non-burst responses and builds neuron snapshots.
//! * [`neuron_sim`] samples firing rates from snapshots and schedules
//!   snapshot refreshes during training (parameter shadowing).
//! * [`envs`] holds the cartpole and navigation tasks plus the
//!   percentile-based rate-to-command mappings.
//! * [`rl`] is a small discrete-action soft actor-critic learner.
//! * [`harness`] wires everything into training, evaluation and
//!   condition comparisons.

pub mod envs;
pub mod harness;
pub mod neuron_sim;
pub mod rl;
pub mod spike_pipeline;
pub mod stats;
pub mod synth_mea;

pub use rand_chacha::ChaCha8Rng as SimRng;

use rand::SeedableRng;

/// Seeded random source used throughout the crate.
pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
