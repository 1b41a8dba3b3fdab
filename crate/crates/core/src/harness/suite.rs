//! The four-comparison experiment: training vs untrained, control vs binary
//! mapping, binary vs graded mapping, and shadowed vs frozen simulators.

use serde::{Deserialize, Serialize};

use super::{
    derive_seed, evaluate, parallel_map, train_animat, ControlMode, EvalOptions, ExperimentSpec,
    HarnessError, Result, TrainOutcome, TrainingLog,
};
use crate::envs::{Condition, TaskKind};
use crate::neuron_sim::{NeuronSnapshot, SnapshotSeries};
use crate::rl::{PolicyCheckpoint, SacConfig};
use crate::stats::{mann_whitney_u, mean, median, MannWhitney};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub task: TaskKind,
    pub step_limit: u64,
    pub n_policies: usize,
    /// Episodes per policy on the first snapshot.
    pub eval_episodes_initial: usize,
    /// Episodes per policy on the evaluation snapshot.
    pub eval_episodes_final: usize,
    /// Defaults to the last snapshot of the series.
    pub eval_snapshot: Option<usize>,
    pub shadow_snapshots: usize,
    /// Mapping used for the shadowed-vs-frozen comparison.
    pub shadow_condition: Condition,
    pub max_iterations: Option<u32>,
    pub control_mode: ControlMode,
    pub recalibrate: bool,
    pub seed: u64,
    /// 0 means all available cores.
    pub threads: usize,
    pub sac: SacConfig,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            task: TaskKind::Cartpole,
            step_limit: ExperimentSpec::default_steps(TaskKind::Cartpole),
            n_policies: 10,
            eval_episodes_initial: 30,
            eval_episodes_final: 100,
            eval_snapshot: None,
            shadow_snapshots: 6,
            shadow_condition: Condition::Map1thr,
            max_iterations: None,
            control_mode: ControlMode::PerStep,
            recalibrate: false,
            seed: 0,
            threads: 0,
            sac: SacConfig::default(),
        }
    }
}

impl SuiteSpec {
    pub fn experiment(&self, condition: Condition, shadowing: bool) -> ExperimentSpec {
        ExperimentSpec {
            task: self.task,
            condition,
            shadowing,
            step_limit: self.step_limit,
            shadow_snapshots: self.shadow_snapshots,
            max_iterations: self.max_iterations,
            control_mode: self.control_mode,
            sac: self.sac.clone(),
            ..ExperimentSpec::default()
        }
    }

    /// Per-policy training seed, shared across conditions.
    pub fn policy_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, i as u64)
    }

    /// Per-policy evaluation seed, shared across conditions.
    pub fn eval_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed ^ 0x5EED_E7A1, i as u64)
    }
}

/// One two-group comparison of per-policy mean returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub label_a: String,
    pub label_b: String,
    pub scores_a: Vec<f64>,
    pub scores_b: Vec<f64>,
    pub test: MannWhitney,
}

impl Comparison {
    pub fn new(
        name: &str,
        label_a: &str,
        label_b: &str,
        scores_a: Vec<f64>,
        scores_b: Vec<f64>,
    ) -> Result<Self> {
        let test = mann_whitney_u(&scores_a, &scores_b)?;
        Ok(Self {
            name: name.into(),
            label_a: label_a.into(),
            label_b: label_b.into(),
            scores_a,
            scores_b,
            test,
        })
    }

    pub fn median_a(&self) -> f64 {
        median(&self.scores_a)
    }

    pub fn median_b(&self) -> f64 {
        median(&self.scores_b)
    }

    /// True when `b` has the higher median and the test rejects at `alpha`.
    pub fn b_wins(&self, alpha: f64) -> bool {
        self.median_b() > self.median_a() && self.test.p < alpha
    }
}

/// Trained policies of one condition.
pub struct ConditionRuns {
    pub condition: Condition,
    pub shadowing: bool,
    pub runs: Vec<TrainOutcome>,
}

impl ConditionRuns {
    pub fn label(&self) -> String {
        format!(
            "{}-{}",
            self.condition.name(),
            if self.shadowing { "shadow" } else { "frozen" }
        )
    }

    pub fn logs(&self) -> Vec<&TrainingLog> {
        self.runs.iter().map(|r| &r.log).collect()
    }
}

pub struct SuiteReport {
    pub spec: SuiteSpec,
    pub groups: Vec<ConditionRuns>,
    pub comparisons: Vec<Comparison>,
}

/// Mean return of each checkpoint over `episodes` greedy episodes.
pub fn score_policies(
    spec: &SuiteSpec,
    checkpoints: &[&PolicyCheckpoint],
    neurons: &NeuronSnapshot,
    episodes: usize,
) -> Result<Vec<f64>> {
    let threads = if spec.threads == 0 { super::available_threads() } else { spec.threads };
    parallel_map(checkpoints.len(), threads, |i| {
        let results = evaluate(
            checkpoints[i],
            Some(neurons),
            &EvalOptions {
                n_episodes: episodes,
                seed: spec.eval_seed(i),
                max_iterations: spec.max_iterations,
                recalibrate: spec.recalibrate,
                control_mode: spec.control_mode,
            },
            None,
        )?;
        Ok(mean(&results.iter().map(|r| r.total_reward).collect::<Vec<_>>()))
    })
    .into_iter()
    .collect()
}

pub fn train_group(
    spec: &SuiteSpec,
    series: &SnapshotSeries,
    condition: Condition,
    shadowing: bool,
) -> Result<ConditionRuns> {
    let exp = spec.experiment(condition, shadowing);
    let threads = if spec.threads == 0 { super::available_threads() } else { spec.threads };
    let runs = parallel_map(spec.n_policies, threads, |i| {
        train_animat(&exp, Some(series), spec.policy_seed(i))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ConditionRuns {
        condition,
        shadowing,
        runs,
    })
}

fn finals(g: &ConditionRuns) -> Vec<&PolicyCheckpoint> {
    g.runs.iter().map(|r| &r.checkpoint).collect()
}

fn initials(g: &ConditionRuns) -> Vec<&PolicyCheckpoint> {
    g.runs.iter().map(|r| &r.initial).collect()
}

/// Trains every group and runs the four comparisons.
pub fn run_experiment(spec: &SuiteSpec, series: &SnapshotSeries) -> Result<SuiteReport> {
    if spec.n_policies < 2 {
        return Err(HarnessError::Spec("need at least two policies per group".into()));
    }
    let eval_idx = spec.eval_snapshot.unwrap_or(series.len() - 1);
    if eval_idx >= series.len() {
        return Err(HarnessError::Spec(format!(
            "evaluation snapshot {eval_idx} out of range ({} snapshots)",
            series.len()
        )));
    }
    let first = series.get(0);
    let late = series.get(eval_idx);

    let mut groups = Vec::new();
    for (cond, shadow) in [
        (Condition::Map1thr, true),
        (Condition::Map9thr, true),
        (Condition::Control, true),
    ] {
        groups.push(train_group(spec, series, cond, shadow)?);
    }
    let shadow_idx = groups
        .iter()
        .position(|g| g.condition == spec.shadow_condition)
        .ok_or_else(|| HarnessError::Spec("shadow condition must be control, map1thr or map9thr".into()))?;
    groups.push(train_group(spec, series, spec.shadow_condition, false)?);

    let get = |c: Condition| groups.iter().find(|g| g.condition == c && g.shadowing).unwrap();

    let base = get(Condition::Map1thr);
    let untrained = score_policies(spec, &initials(base), first, spec.eval_episodes_initial)?;
    let trained = score_policies(spec, &finals(base), first, spec.eval_episodes_initial)?;

    let n_final = spec.eval_episodes_final;
    let control = score_policies(spec, &finals(get(Condition::Control)), late, n_final)?;
    let one = score_policies(spec, &finals(base), late, n_final)?;
    let nine = score_policies(spec, &finals(get(Condition::Map9thr)), late, n_final)?;
    let shadowed = if spec.shadow_condition == Condition::Map1thr {
        one.clone()
    } else {
        score_policies(spec, &finals(&groups[shadow_idx]), late, n_final)?
    };
    let frozen = score_policies(spec, &finals(groups.last().unwrap()), late, n_final)?;

    let sc = spec.shadow_condition.name();
    let comparisons = vec![
        Comparison::new("training", "untrained", "trained", untrained, trained)?,
        Comparison::new("control_vs_map1thr", "control", "map1thr", control, one.clone())?,
        Comparison::new("map1thr_vs_map9thr", "map1thr", "map9thr", one, nine)?,
        Comparison::new(
            "frozen_vs_shadow",
            &format!("{sc}-frozen"),
            &format!("{sc}-shadow"),
            frozen,
            shadowed,
        )?,
    ];
    Ok(SuiteReport {
        spec: spec.clone(),
        groups,
        comparisons,
    })
}
