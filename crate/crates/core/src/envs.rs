//! Cartpole and navigation tasks, and the percentile mappings that turn a
//! sampled firing rate into a motor command.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Cartpole,
    Navigation,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Cartpole => "cartpole",
            TaskKind::Navigation => "navigation",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cartpole" => Ok(TaskKind::Cartpole),
            "navigation" | "nav" => Ok(TaskKind::Navigation),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartpoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    /// Treat `pole_length` as the half-length `l` of the classic equations.
    /// When false, `l = pole_length / 2`.
    pub pole_length_is_half: bool,
    pub track_width: f64,
    pub step_duration: f64,
    pub force_max: f64,
    /// Force noise is uniform in `[-force_noise, force_noise]`.
    pub force_noise: f64,
    pub angle_limit_rad: f64,
    pub max_iterations: u32,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 0.31,
            pole_mass: 0.55,
            pole_length: 0.4,
            pole_length_is_half: true,
            track_width: 1.0,
            step_duration: 0.02,
            force_max: 1.0,
            force_noise: 0.02,
            angle_limit_rad: 12f64.to_radians(),
            max_iterations: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub fn to_obs(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }
}

/// Pole and cart accelerations `(x_ddot, theta_ddot)` for the classic
/// cart-pole equations.
pub fn cartpole_accel(state: &CartpoleState, force: f64, params: &CartpoleParams) -> (f64, f64) {
    let l = if params.pole_length_is_half {
        params.pole_length
    } else {
        0.5 * params.pole_length
    };
    let total = params.cart_mass + params.pole_mass;
    let (sin, cos) = state.theta.sin_cos();
    let temp = (force + params.pole_mass * l * state.theta_dot * state.theta_dot * sin) / total;
    let theta_acc = (params.gravity * sin - cos * temp)
        / (l * (4.0 / 3.0 - params.pole_mass * cos * cos / total));
    let x_acc = temp - params.pole_mass * l * theta_acc * cos / total;
    (x_acc, theta_acc)
}

/// One control step. Velocities update first and positions use the new
/// velocities (semi-implicit Euler). Returns `(state', reward, failed)`.
pub fn cartpole_step<R: Rng + ?Sized>(
    state: &CartpoleState,
    force: f64,
    params: &CartpoleParams,
    rng: &mut R,
) -> Result<(CartpoleState, f64, bool)> {
    if !force.is_finite()
        || ![state.x, state.x_dot, state.theta, state.theta_dot]
            .iter()
            .all(|v| v.is_finite())
    {
        return Err(EnvError::NonFinite("cartpole_step"));
    }
    let mut f = force.clamp(-params.force_max, params.force_max);
    if params.force_noise > 0.0 {
        f += rng.random_range(-params.force_noise..=params.force_noise);
    }
    let (x_acc, theta_acc) = cartpole_accel(state, f, params);
    let dt = params.step_duration;
    let x_dot = state.x_dot + dt * x_acc;
    let theta_dot = state.theta_dot + dt * theta_acc;
    let next = CartpoleState {
        x: state.x + dt * x_dot,
        x_dot,
        theta: state.theta + dt * theta_dot,
        theta_dot,
    };
    let failed =
        next.theta.abs() > params.angle_limit_rad || next.x.abs() > 0.5 * params.track_width;
    Ok((next, if failed { -100.0 } else { 1.0 }, failed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavParams {
    pub arena_size: f64,
    pub step_length: f64,
    pub dtheta_max: f64,
    pub goal: (f64, f64),
    pub goal_radius: f64,
    pub goal_reward: f64,
    pub max_iterations: u32,
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            arena_size: 1.0,
            step_length: 0.025,
            dtheta_max: PI / 10.0,
            goal: (0.7, 0.7),
            goal_radius: 0.1,
            goal_reward: 50.0,
            max_iterations: 20,
        }
    }
}

/// Robot pose. Origin is the top-left corner, x to the right, y downward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl NavState {
    pub fn to_obs(self) -> Vec<f64> {
        vec![self.x, self.y, self.theta]
    }
}

/// Wraps an angle into `[-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t < -PI {
        t += 2.0 * PI;
    }
    t
}

pub fn goal_distance(state: &NavState, params: &NavParams) -> f64 {
    (state.x - params.goal.0).hypot(state.y - params.goal.1)
}

/// Distance-shaped reward: the goal bonus inside `R_goal`, otherwise
/// `R_goal / d - 1`.
pub fn nav_reward(d: f64, params: &NavParams) -> f64 {
    if d <= params.goal_radius {
        params.goal_reward
    } else {
        params.goal_radius / d - 1.0
    }
}

/// Turn, then move one step forward. Returns `(state', reward, reached)`.
pub fn nav_step(state: &NavState, dtheta: f64, params: &NavParams) -> Result<(NavState, f64, bool)> {
    if !dtheta.is_finite() || ![state.x, state.y, state.theta].iter().all(|v| v.is_finite()) {
        return Err(EnvError::NonFinite("nav_step"));
    }
    let dtheta = dtheta.clamp(-params.dtheta_max, params.dtheta_max);
    let theta = wrap_angle(state.theta + dtheta);
    let (sin, cos) = theta.sin_cos();
    let next = NavState {
        x: (state.x + params.step_length * cos).clamp(0.0, params.arena_size),
        y: (state.y + params.step_length * sin).clamp(0.0, params.arena_size),
        theta,
    };
    let d = goal_distance(&next, params);
    Ok((next, nav_reward(d, params), d <= params.goal_radius))
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Episode ended by the task itself (failure or goal).
    pub terminal: bool,
    /// Episode cut off by the iteration limit.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Episodic task driven by a normalized command in `[-1, 1]`.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, command: f64, rng: &mut dyn rand::RngCore) -> Result<Step>;
    fn iteration(&self) -> u32;
}

#[derive(Debug, Clone)]
pub struct CartpoleEnv {
    pub params: CartpoleParams,
    pub state: CartpoleState,
    iteration: u32,
}

impl CartpoleEnv {
    pub fn new(params: CartpoleParams) -> Self {
        Self {
            params,
            state: CartpoleState::default(),
            iteration: 0,
        }
    }
}

impl Environment for CartpoleEnv {
    fn obs_dim(&self) -> usize {
        4
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = CartpoleState::default();
        self.iteration = 0;
        self.state.to_obs()
    }

    fn step(&mut self, command: f64, rng: &mut dyn rand::RngCore) -> Result<Step> {
        let (next, reward, failed) =
            cartpole_step(&self.state, command * self.params.force_max, &self.params, rng)?;
        self.state = next;
        self.iteration += 1;
        Ok(Step {
            obs: next.to_obs(),
            reward,
            terminal: failed,
            truncated: !failed && self.iteration >= self.params.max_iterations,
        })
    }

    fn iteration(&self) -> u32 {
        self.iteration
    }
}

#[derive(Debug, Clone)]
pub struct NavEnv {
    pub params: NavParams,
    pub state: NavState,
    iteration: u32,
}

impl NavEnv {
    pub fn new(params: NavParams) -> Self {
        Self {
            params,
            state: NavState::default(),
            iteration: 0,
        }
    }
}

impl Environment for NavEnv {
    fn obs_dim(&self) -> usize {
        3
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = NavState::default();
        self.iteration = 0;
        self.state.to_obs()
    }

    fn step(&mut self, command: f64, _rng: &mut dyn rand::RngCore) -> Result<Step> {
        let (next, reward, reached) =
            nav_step(&self.state, command * self.params.dtheta_max, &self.params)?;
        self.state = next;
        self.iteration += 1;
        Ok(Step {
            obs: next.to_obs(),
            reward,
            terminal: reached,
            truncated: !reached && self.iteration >= self.params.max_iterations,
        })
    }

    fn iteration(&self) -> u32 {
        self.iteration
    }
}

/// Binary mapping: `+1` at or above the median, `-1` below.
pub fn map_rate_1thr(rate: f64, percentiles: &[f64]) -> f64 {
    if rate >= percentiles[5] {
        1.0
    } else {
        -1.0
    }
}

/// Decile bucket of `rate` (1..=10): `[P0, P10]`, then `(P10k, P10(k+1)]`.
/// Values outside the table saturate to the first or last bucket.
pub fn decile_bucket(rate: f64, percentiles: &[f64]) -> usize {
    let above = percentiles[1..=10].partition_point(|&p| p < rate);
    (above + 1).min(10)
}

/// Command level of a decile bucket: -1.0..-0.2 below the median and
/// 0.2..1.0 above it, in steps of 0.2.
pub fn bucket_level(bucket: usize) -> f64 {
    const LEVELS: [f64; 10] = [-1.0, -0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8, 1.0];
    LEVELS[bucket.clamp(1, 10) - 1]
}

/// Ten-level mapping through the nine inner decile thresholds.
pub fn map_rate_9thr(rate: f64, percentiles: &[f64]) -> f64 {
    bucket_level(decile_bucket(rate, percentiles))
}

/// How the policy's frequency choice reaches the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// No neuron simulator; the action is the command itself.
    Baseline,
    /// Frequency chosen at random, ignoring the policy.
    Control,
    Map1thr,
    Map9thr,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Control => "control",
            Condition::Map1thr => "map1thr",
            Condition::Map9thr => "map9thr",
        }
    }

    pub fn uses_simulator(self) -> bool {
        self != Condition::Baseline
    }

    /// Rate-to-command mapping. The control condition uses the binary map.
    pub fn map_rate(self, rate: f64, percentiles: &[f64]) -> f64 {
        match self {
            Condition::Map9thr => map_rate_9thr(rate, percentiles),
            _ => map_rate_1thr(rate, percentiles),
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "control" => Ok(Condition::Control),
            "map1thr" | "1thr" => Ok(Condition::Map1thr),
            "map9thr" | "9thr" => Ok(Condition::Map9thr),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

/// Control-condition frequency selection: uniform over `n` indices.
pub fn control_mapping<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Variant of the control condition: a random permutation fixed for the
/// whole run replaces the policy's choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPermutation(pub Vec<usize>);

impl FixedPermutation {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        use rand::seq::SliceRandom;
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        Self(p)
    }

    pub fn apply(&self, action: usize) -> usize {
        self.0[action]
    }
}

/// Normalized command levels for the baseline condition.
pub fn baseline_levels(task: TaskKind) -> Vec<f64> {
    match task {
        TaskKind::Cartpole => vec![-1.0, 1.0],
        TaskKind::Navigation => vec![-1.0, -0.5, 0.0, 0.5, 1.0],
    }
}
