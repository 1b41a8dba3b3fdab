//! Training and evaluation loops for baseline and Animat conditions.
//!
//! Per control step an Animat run does: observe the task state, let the
//! policy pick a stimulus frequency (or pick one at random under the
//! control condition), sample an evoked rate from the active neuron
//! snapshot, map it to a command through the percentile table and step the
//! task. Baseline runs skip the neuron layer and act on the task directly.

pub mod report;
pub mod suite;

use std::thread;

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{
    baseline_levels, control_mapping, CartpoleEnv, CartpoleParams, Condition, EnvError,
    Environment, FixedPermutation, NavEnv, NavParams, TaskKind,
};
use crate::neuron_sim::{NeuronSnapshot, SimError, SnapshotSeries};
use crate::rl::checkpoint::CHECKPOINT_VERSION;
use crate::rl::{flip_action, ActionMode, PolicyCheckpoint, ReplayBuffer, RlError, SacConfig, SacLearner};
use crate::{seeded_rng, SimRng};

pub use suite::{run_experiment, Comparison, SuiteReport, SuiteSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error("missing inputs: {0}")]
    Missing(String),
    #[error("checkpoint is for {found}, not {expected}")]
    Incompatible { expected: String, found: String },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Control-condition randomization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Fresh uniform frequency every step.
    #[default]
    PerStep,
    /// One random permutation of the policy's actions for the whole run.
    FixedPermutation,
}

/// Everything that defines one training run apart from its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub task: TaskKind,
    pub condition: Condition,
    pub shadowing: bool,
    pub step_limit: u64,
    /// Snapshots visited during a shadowed run.
    pub shadow_snapshots: usize,
    /// Overrides the task's iteration limit per episode.
    pub max_iterations: Option<u32>,
    pub control_mode: ControlMode,
    pub flip_prob: f64,
    /// Greedy evaluation every this many steps (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Stop once the periodic greedy evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
    pub sac: SacConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            task: TaskKind::Cartpole,
            condition: Condition::Map1thr,
            shadowing: true,
            step_limit: 150_000,
            shadow_snapshots: 6,
            max_iterations: None,
            control_mode: ControlMode::PerStep,
            flip_prob: 0.0,
            eval_every: 0,
            eval_episodes: 30,
            stop_at_return: None,
            sac: SacConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// Desk-scale step limit per task.
    pub fn default_steps(task: TaskKind) -> u64 {
        match task {
            TaskKind::Cartpole => 150_000,
            TaskKind::Navigation => 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_limit == 0 {
            return Err(HarnessError::Spec("step limit must be positive".into()));
        }
        if self.shadow_snapshots == 0 {
            return Err(HarnessError::Spec("shadow_snapshots must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(HarnessError::Spec("flip_prob must be in [0, 1]".into()));
        }
        if self.condition == Condition::Baseline && self.shadowing {
            return Err(HarnessError::Spec("baseline runs have no simulator to shadow".into()));
        }
        Ok(())
    }

    /// Steps between snapshot switches: `ceil(limit / shadow_snapshots)`.
    pub fn switch_interval(&self) -> u64 {
        self.step_limit.div_ceil(self.shadow_snapshots as u64).max(1)
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations.unwrap_or(match self.task {
            TaskKind::Cartpole => CartpoleParams::default().max_iterations,
            TaskKind::Navigation => NavParams::default().max_iterations,
        })
    }
}

pub fn make_env(task: TaskKind, max_iterations: u32) -> Box<dyn Environment + Send> {
    match task {
        TaskKind::Cartpole => Box::new(CartpoleEnv::new(CartpoleParams {
            max_iterations,
            ..CartpoleParams::default()
        })),
        TaskKind::Navigation => Box::new(NavEnv::new(NavParams {
            max_iterations,
            ..NavParams::default()
        })),
    }
}

pub fn n_actions(task: TaskKind, condition: Condition, n_frequencies: usize) -> usize {
    if condition.uses_simulator() {
        n_frequencies
    } else {
        baseline_levels(task).len()
    }
}

/// Result of turning one policy action into a task command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub freq_index: Option<usize>,
    pub rate: Option<f64>,
    pub command: f64,
}

/// The layer between policy and task: direct levels for the baseline,
/// otherwise neuron sampling plus percentile mapping.
pub struct Actuator<'a> {
    task: TaskKind,
    condition: Condition,
    control_mode: ControlMode,
    permutation: Option<&'a FixedPermutation>,
    neurons: Option<&'a NeuronSnapshot>,
    percentiles: Option<&'a [f64]>,
}

impl<'a> Actuator<'a> {
    pub fn actuate<R: Rng + ?Sized>(&self, action: usize, rng: &mut R) -> Result<Actuation> {
        let (Some(neurons), Some(table)) = (self.neurons, self.percentiles) else {
            return Ok(Actuation {
                freq_index: None,
                rate: None,
                command: baseline_levels(self.task)[action],
            });
        };
        let freq_index = match (self.condition, self.control_mode) {
            (Condition::Control, ControlMode::PerStep) => {
                control_mapping(rng, neurons.n_frequencies())
            }
            (Condition::Control, ControlMode::FixedPermutation) => {
                self.permutation.expect("permutation drawn").apply(action)
            }
            _ => action,
        };
        let rate = neurons.sample_response(freq_index, rng)?;
        Ok(Actuation {
            freq_index: Some(freq_index),
            rate: Some(rate),
            command: self.condition.map_rate(rate, table),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub end_step: u64,
    pub total_reward: f64,
    pub length: u32,
    pub snapshot_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub mean_return: f64,
    pub mean_length: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    /// `(step, snapshot index)` at every snapshot switch, starting at step 0.
    pub snapshot_switches: Vec<(u64, usize)>,
    pub evals: Vec<EvalPoint>,
    pub steps_run: u64,
}

impl TrainingLog {
    pub fn distinct_snapshots(&self) -> Vec<usize> {
        self.snapshot_switches.iter().map(|&(_, i)| i).collect()
    }
}

pub struct TrainOutcome {
    pub initial: PolicyCheckpoint,
    pub checkpoint: PolicyCheckpoint,
    pub log: TrainingLog,
}

fn checkpoint_of(
    spec: &ExperimentSpec,
    seed: u64,
    step: u64,
    learner: &SacLearner,
    table: Option<&[f64]>,
) -> PolicyCheckpoint {
    PolicyCheckpoint {
        version: CHECKPOINT_VERSION,
        task: spec.task,
        condition: spec.condition,
        seed,
        step,
        config_hash: learner.config.hash(),
        mapping_percentiles: table.map(<[f64]>::to_vec),
        learner: learner.clone(),
    }
}

/// Trains one policy. `series` is required for every condition except the
/// baseline; without shadowing only its first snapshot is used.
pub fn train_animat(
    spec: &ExperimentSpec,
    series: Option<&SnapshotSeries>,
    seed: u64,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let series = match (spec.condition.uses_simulator(), series) {
        (true, None) => {
            return Err(HarnessError::Missing(
                "snapshot series (run gen-data and build-sim first)".into(),
            ))
        }
        (true, Some(s)) => Some(s),
        (false, _) => None,
    };
    let n_freq = series.map_or(0, |s| s.get(0).n_frequencies());
    let n_act = n_actions(spec.task, spec.condition, n_freq);
    let interval = spec.switch_interval();

    let mut rng = seeded_rng(seed);
    let mut env = make_env(spec.task, spec.max_iterations());
    let mut learner = SacLearner::new(spec.sac.clone(), env.obs_dim(), n_act, &mut rng);
    let permutation = (spec.condition == Condition::Control
        && spec.control_mode == ControlMode::FixedPermutation)
        .then(|| FixedPermutation::new(&mut rng, n_act));
    let mut buffer = ReplayBuffer::new(spec.sac.buffer_capacity, env.obs_dim());

    let snapshot_at = |step: u64| -> Option<usize> {
        series.map(|s| {
            if spec.shadowing {
                crate::neuron_sim::active_snapshot(interval, s.len(), step)
            } else {
                0
            }
        })
    };
    let table_at = |idx: Option<usize>| idx.map(|i| series.unwrap().get(i).percentiles.as_slice());
    let initial = checkpoint_of(spec, seed, 0, &learner, table_at(snapshot_at(0)));

    let mut log = TrainingLog::default();
    let mut obs = env.reset();
    let mut ep_return = 0.0;
    let mut episode = 0usize;
    let mut last_idx = snapshot_at(0);
    let mut step = 0u64;

    while step < spec.step_limit {
        let idx = snapshot_at(step);
        if let Some(i) = idx {
            if step == 0 || idx != last_idx {
                log.snapshot_switches.push((step, i));
            }
        }
        last_idx = idx;
        let actuator = Actuator {
            task: spec.task,
            condition: spec.condition,
            control_mode: spec.control_mode,
            permutation: permutation.as_ref(),
            neurons: idx.map(|i| series.unwrap().get(i)),
            percentiles: table_at(idx),
        };

        let action = if step < spec.sac.warmup_steps {
            rng.random_range(0..n_act)
        } else {
            learner.select_action(&obs, ActionMode::Explore, &mut rng)?
        };
        let action = flip_action(action, n_act, spec.flip_prob, &mut rng);
        let act = actuator.actuate(action, &mut rng)?;
        let out = env.step(act.command, &mut rng)?;
        buffer.push(&obs, action, out.reward, &out.obs, out.terminal);
        ep_return += out.reward;
        step += 1;

        if out.done() {
            log.episodes.push(EpisodeLog {
                episode,
                end_step: step,
                total_reward: ep_return,
                length: env.iteration(),
                snapshot_index: idx,
            });
            episode += 1;
            ep_return = 0.0;
            obs = env.reset();
        } else {
            obs = out.obs;
        }

        if step >= spec.sac.warmup_steps && step % spec.sac.update_every.max(1) == 0 {
            let batch = buffer.sample(spec.sac.batch_size, &mut rng);
            learner.sac_update(&batch)?;
        }

        if spec.eval_every > 0 && step % spec.eval_every == 0 {
            let cp = checkpoint_of(spec, seed, step, &learner, table_at(idx));
            let neurons = idx.map(|i| series.unwrap().get(i));
            let eval_seed = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let results = evaluate(
                &cp,
                neurons,
                &EvalOptions {
                    n_episodes: spec.eval_episodes,
                    seed: eval_seed,
                    max_iterations: Some(spec.max_iterations()),
                    ..EvalOptions::default()
                },
                None,
            )?;
            let point = EvalPoint {
                step,
                mean_return: crate::stats::mean(&results.iter().map(|r| r.total_reward).collect::<Vec<_>>()),
                mean_length: crate::stats::mean(&results.iter().map(|r| r.length as f64).collect::<Vec<_>>()),
            };
            let stop = spec.stop_at_return.is_some_and(|t| point.mean_return >= t);
            log.evals.push(point);
            if stop {
                break;
            }
        }
    }
    log.steps_run = step;
    let checkpoint = checkpoint_of(spec, seed, step, &learner, table_at(last_idx));
    Ok(TrainOutcome {
        initial,
        checkpoint,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub n_episodes: usize,
    pub seed: u64,
    pub max_iterations: Option<u32>,
    /// Map rates with the evaluation snapshot's own percentile table
    /// instead of the calibration stored in the checkpoint.
    pub recalibrate: bool,
    pub control_mode: ControlMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_episodes: 100,
            seed: 0,
            max_iterations: None,
            recalibrate: false,
            control_mode: ControlMode::PerStep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub length: u32,
    pub terminal: bool,
}

/// One row of a per-step trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub step: u32,
    pub obs: Vec<f64>,
    pub action: usize,
    pub rate: Option<f64>,
    pub command: f64,
    pub reward: f64,
    pub done: bool,
}

/// Greedy evaluation. `neurons` is the snapshot that plays the role of the
/// cultured neurons; it is ignored for baseline checkpoints.
pub fn evaluate(
    checkpoint: &PolicyCheckpoint,
    neurons: Option<&NeuronSnapshot>,
    opts: &EvalOptions,
    mut trajectory: Option<&mut Vec<TrajectoryRow>>,
) -> Result<Vec<EpisodeResult>> {
    let uses_sim = checkpoint.condition.uses_simulator();
    let neurons = match (uses_sim, neurons) {
        (true, None) => return Err(HarnessError::Missing("evaluation snapshot".into())),
        (true, Some(n)) => {
            if n.n_frequencies() != checkpoint.learner.n_actions {
                return Err(HarnessError::Incompatible {
                    expected: format!("{} frequencies", n.n_frequencies()),
                    found: format!("{} policy actions", checkpoint.learner.n_actions),
                });
            }
            Some(n)
        }
        (false, _) => None,
    };
    let table = match neurons {
        Some(n) if opts.recalibrate || checkpoint.mapping_percentiles.is_none() => {
            Some(n.percentiles.as_slice())
        }
        Some(_) => checkpoint.mapping_percentiles.as_deref(),
        None => None,
    };
    let max_iter = opts.max_iterations.unwrap_or_else(|| {
        ExperimentSpec {
            task: checkpoint.task,
            ..ExperimentSpec::default()
        }
        .max_iterations()
    });
    let mut env = make_env(checkpoint.task, max_iter);
    if env.obs_dim() != checkpoint.learner.obs_dim {
        return Err(HarnessError::Incompatible {
            expected: format!("{} observations", env.obs_dim()),
            found: format!("{}", checkpoint.learner.obs_dim),
        });
    }
    let mut rng = seeded_rng(opts.seed);
    let permutation = (checkpoint.condition == Condition::Control
        && opts.control_mode == ControlMode::FixedPermutation)
        .then(|| FixedPermutation::new(&mut rng, checkpoint.learner.n_actions));
    let actuator = Actuator {
        task: checkpoint.task,
        condition: checkpoint.condition,
        control_mode: opts.control_mode,
        permutation: permutation.as_ref(),
        neurons,
        percentiles: table,
    };

    let mut results = Vec::with_capacity(opts.n_episodes);
    for episode in 0..opts.n_episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let action = checkpoint
                .learner
                .select_action(&obs, ActionMode::Greedy, &mut rng)?;
            let act = actuator.actuate(action, &mut rng)?;
            let out = env.step(act.command, &mut rng)?;
            total += out.reward;
            if let Some(rows) = trajectory.as_deref_mut() {
                rows.push(TrajectoryRow {
                    episode,
                    step: env.iteration(),
                    obs: out.obs.clone(),
                    action,
                    rate: act.rate,
                    command: act.command,
                    reward: out.reward,
                    done: out.done(),
                });
            }
            if out.done() {
                results.push(EpisodeResult {
                    total_reward: total,
                    length: env.iteration(),
                    terminal: out.terminal,
                });
                break;
            }
            obs = out.obs;
        }
    }
    Ok(results)
}

/// Runs `f(i)` for `i in 0..n` on up to `threads` workers and returns the
/// results in index order.
pub fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let collected = thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= n {
                            break;
                        }
                        out.push((i, f(i)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, v) in collected {
        slots[i] = Some(v);
    }
    slots.into_iter().map(|s| s.expect("every index ran")).collect()
}

pub fn available_threads() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

/// Derives independent per-run seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut r = SimRng::seed_from_u64(base);
    r.set_stream(stream);
    r.next_u64()
}
