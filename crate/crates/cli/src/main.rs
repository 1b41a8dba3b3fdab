use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use animat_core::envs::{Condition, TaskKind};
use animat_core::harness::report::{
    comparisons_csv, comparisons_svg, episodes_csv, evals_csv, read_scores_csv, scores_csv,
    training_curves_svg, trajectory_csv, write_file,
};
use animat_core::harness::suite::Comparison;
use animat_core::harness::{
    evaluate, run_experiment, train_animat, EpisodeLog, EvalOptions, ExperimentSpec, SuiteSpec,
    TrainingLog,
};
use animat_core::neuron_sim::SnapshotSeries;
use animat_core::rl::{PolicyCheckpoint, SacConfig};
use animat_core::seeded_rng;
use animat_core::spike_pipeline::{parse_recording, snapshot_from_session, RecordingConfig};
use animat_core::stats::mean;
use animat_core::synth_mea::{gen_series, GenParams};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "animat", version, about = "Synthetic MEA data, neuron simulators and Animat training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic spike/stimulus recordings.
    GenData(Opts),
    /// Build neuron-simulator snapshots from recordings.
    BuildSim(Opts),
    /// Train one policy.
    Train(Opts),
    /// Evaluate a checkpoint greedily.
    Eval(Opts),
    /// Run the four-comparison experiment, or test two sets of returns files.
    Compare(Opts),
    /// Render a scores or episodes CSV as SVG.
    Plot(Opts),
}

/// Every flag; a JSON file passed with `--config` may set the same keys
/// (snake_case) and flags given on the command line win.
#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(default, deny_unknown_fields)]
struct Opts {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    shadowing: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    snapshots_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recordings directory (gen-data output, build-sim input).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    n_snapshots: Option<usize>,
    #[arg(long)]
    interval_min: Option<f64>,
    #[arg(long)]
    fatigue_rate: Option<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Snapshot used for evaluation (default: last).
    #[arg(long)]
    snapshot_index: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    policies: Option<usize>,
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long)]
    threads: Option<usize>,
    /// Map rates with the evaluation snapshot's own percentile table.
    #[arg(long)]
    recalibrate: Option<bool>,
    /// Also write a per-step trajectory CSV.
    #[arg(long)]
    trajectory: Option<bool>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Input CSV for `plot`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Returns CSVs of group A (one per policy) for `compare`.
    #[arg(long, num_args = 1..)]
    returns_a: Option<Vec<PathBuf>>,
    #[arg(long, num_args = 1..)]
    returns_b: Option<Vec<PathBuf>>,
    /// Generator parameters (config file only).
    #[arg(skip)]
    r#gen: Option<GenParams>,
    /// Learner hyperparameters (config file only).
    #[arg(skip)]
    sac: Option<SacConfig>,
}

macro_rules! overlay {
    ($cli:ident, $file:ident, $($f:ident),*) => {
        Opts { config: $cli.config, $($f: $cli.$f.or($file.$f)),* }
    };
}

impl Opts {
    fn resolve(self) -> Result<Opts, String> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                serde_json::from_str::<Opts>(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => Opts::default(),
        };
        let cli = self;
        Ok(overlay!(
            cli, file, task, condition, shadowing, seed, steps, snapshots_dir, out, data_dir,
            n_snapshots, interval_min, fatigue_rate, checkpoint, snapshot_index, episodes, policies,
            max_iterations, threads, recalibrate, trajectory, eval_every, input, returns_a,
            returns_b, r#gen, sac
        ))
    }

    fn task(&self) -> TaskKind {
        self.task.unwrap_or(TaskKind::Cartpole)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn snapshots_dir(&self) -> PathBuf {
        self.snapshots_dir.clone().unwrap_or_else(|| PathBuf::from("snapshots"))
    }

    fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| PathBuf::from("data"))
    }

    fn max_iterations(&self) -> Option<u32> {
        self.max_iterations.or(match self.task() {
            TaskKind::Navigation => Some(60),
            TaskKind::Cartpole => None,
        })
    }

    fn load_series(&self) -> Result<SnapshotSeries, String> {
        let dir = self.snapshots_dir();
        SnapshotSeries::load_dir(&dir, 1).map_err(|e| {
            format!("cannot load snapshots from {} ({e}); run gen-data and build-sim first", dir.display())
        })
    }
}

type CmdResult = Result<(), String>;

fn write(path: &Path, text: &str) -> CmdResult {
    write_file(path, text).map_err(|e| e.to_string())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn gen_data(o: &Opts) -> CmdResult {
    let mut params = o.r#gen.clone().unwrap_or_default();
    params.seed = o.seed.unwrap_or(params.seed);
    if let Some(l) = o.fatigue_rate {
        params.fatigue_rate = l;
    }
    let n = o.n_snapshots.unwrap_or(14);
    let interval = o.interval_min.unwrap_or(10.0);
    let out = o.data_dir.clone().or_else(|| o.out.clone()).unwrap_or_else(|| PathBuf::from("data"));
    let sessions = gen_series(&params, n, interval, &mut seeded_rng(params.seed)).map_err(|e| e.to_string())?;
    let mut manifest = String::from("session,t_offset_min\n");
    for (i, s) in sessions.iter().enumerate() {
        let dir = out.join(format!("session_{i:03}"));
        write(&dir.join("spikes.csv"), &s.spikes_csv())?;
        write(&dir.join("stims.csv"), &s.stims_csv())?;
        write(&dir.join("truth.csv"), &s.truth_csv())?;
        manifest.push_str(&format!("session_{i:03},{}\n", s.session.t_offset_min));
    }
    write(&out.join("manifest.csv"), &manifest)?;
    let json = serde_json::to_string_pretty(&params).map_err(|e| e.to_string())?;
    write(&out.join("params.json"), &(json + "\n"))
}

fn build_sim(o: &Opts) -> CmdResult {
    let data = o.data_dir();
    let config: RecordingConfig = match fs::read_to_string(data.join("params.json")) {
        Ok(text) => serde_json::from_str::<GenParams>(&text)
            .map_err(|e| format!("params.json: {e}"))?
            .recording_config(),
        Err(_) => RecordingConfig::default(),
    };
    let manifest_path = data.join("manifest.csv");
    let manifest = fs::read_to_string(&manifest_path)
        .map_err(|e| format!("{}: {e}; run gen-data first", manifest_path.display()))?;
    let mut snapshots = Vec::new();
    let mut summary = String::from("session,t_offset_min,otsu_threshold,n_stimuli,n_burst,p10,p50,p90\n");
    for (line, row) in manifest.lines().enumerate().skip(1) {
        let (name, t) = row
            .split_once(',')
            .ok_or_else(|| format!("manifest.csv line {}: expected `session,t_offset_min`", line + 1))?;
        let t: f64 = t.trim().parse().map_err(|e| format!("manifest.csv line {}: {e}", line + 1))?;
        let dir = data.join(name);
        let open = |f: &str| fs::File::open(dir.join(f)).map_err(|e| format!("{}: {e}", dir.join(f).display()));
        let session = parse_recording(open("spikes.csv")?, open("stims.csv")?, config.clone(), t)
            .map_err(|e| e.to_string())?;
        let (snap, samples) = snapshot_from_session(&session).map_err(|e| format!("{name}: {e}"))?;
        let bursts = samples.iter().filter(|s| s.is_burst == Some(true)).count();
        summary.push_str(&format!(
            "{name},{t},{},{},{bursts},{},{},{}\n",
            snap.otsu_threshold,
            samples.len(),
            snap.percentiles[1],
            snap.percentiles[5],
            snap.percentiles[9]
        ));
        snapshots.push(snap);
    }
    let series = SnapshotSeries::new(snapshots, 1).map_err(|e| e.to_string())?;
    let dir = o.snapshots_dir();
    series.save_dir(&dir).map_err(|e| e.to_string())?;
    eprintln!("wrote {} snapshots to {}", series.len(), dir.display());
    write(&dir.join("summary.csv"), &summary)
}

fn experiment(o: &Opts) -> ExperimentSpec {
    let task = o.task();
    let condition = o.condition.unwrap_or(Condition::Map1thr);
    ExperimentSpec {
        task,
        condition,
        shadowing: o.shadowing.unwrap_or(condition.uses_simulator()),
        step_limit: o.steps.unwrap_or_else(|| ExperimentSpec::default_steps(task)),
        max_iterations: o.max_iterations(),
        eval_every: o.eval_every.unwrap_or(0),
        eval_episodes: o.episodes.unwrap_or(30),
        sac: o.sac.clone().unwrap_or_default(),
        ..ExperimentSpec::default()
    }
}

fn train(o: &Opts) -> CmdResult {
    let spec = experiment(o);
    let series = if spec.condition.uses_simulator() { Some(o.load_series()?) } else { None };
    let out = o.out("runs/train");
    let result = train_animat(&spec, series.as_ref(), o.seed()).map_err(|e| e.to_string())?;
    let cp = |c: &PolicyCheckpoint| c.to_json();
    write(&out.join("checkpoint.json"), &cp(&result.checkpoint))?;
    write(&out.join("initial_checkpoint.json"), &cp(&result.initial))?;
    write(&out.join("episodes.csv"), &episodes_csv(&result.log).map_err(|e| e.to_string())?)?;
    if !result.log.evals.is_empty() {
        write(&out.join("evals.csv"), &evals_csv(&result.log).map_err(|e| e.to_string())?)?;
    }
    let spec_json = serde_json::to_string_pretty(&spec).map_err(|e| e.to_string())?;
    write(&out.join("spec.json"), &(spec_json + "\n"))
}

fn eval(o: &Opts) -> CmdResult {
    let path = o.checkpoint.clone().ok_or("eval needs --checkpoint")?;
    let checkpoint = PolicyCheckpoint::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let series = if checkpoint.condition.uses_simulator() { Some(o.load_series()?) } else { None };
    let neurons = match &series {
        Some(s) => {
            let idx = o.snapshot_index.unwrap_or(s.len() - 1);
            if idx >= s.len() {
                return Err(format!("snapshot index {idx} out of range ({} snapshots)", s.len()));
            }
            Some(s.get(idx))
        }
        None => None,
    };
    let opts = EvalOptions {
        n_episodes: o.episodes.unwrap_or(100),
        seed: o.seed(),
        max_iterations: o.max_iterations.or(match checkpoint.task {
            TaskKind::Navigation => Some(60),
            TaskKind::Cartpole => None,
        }),
        recalibrate: o.recalibrate.unwrap_or(false),
        ..EvalOptions::default()
    };
    let mut rows = Vec::new();
    let want_traj = o.trajectory.unwrap_or(false);
    let results = evaluate(&checkpoint, neurons, &opts, want_traj.then_some(&mut rows)).map_err(|e| e.to_string())?;
    let out = o.out("runs/eval");
    let mut csv = String::from("episode,total_reward,length,terminal\n");
    for (i, r) in results.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", r.total_reward, r.length, u8::from(r.terminal)));
    }
    write(&out.join("returns.csv"), &csv)?;
    if want_traj {
        write(&out.join("trajectory.csv"), &trajectory_csv(checkpoint.task, &rows).map_err(|e| e.to_string())?)?;
    }
    println!(
        "mean return {:.4} over {} episodes",
        mean(&results.iter().map(|r| r.total_reward).collect::<Vec<_>>()),
        results.len()
    );
    Ok(())
}

fn mean_return(path: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let field = line
            .split(',')
            .nth(1)
            .ok_or_else(|| format!("{} line {}: missing total_reward", path.display(), i + 1))?;
        values.push(field.parse::<f64>().map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?);
    }
    if values.is_empty() {
        return Err(format!("{}: no returns", path.display()));
    }
    Ok(mean(&values))
}

fn print_comparisons(cs: &[Comparison]) {
    for c in cs {
        println!(
            "{:<20} {:>16} median {:>10.4} | {:>16} median {:>10.4} | U={} p={:.3e}",
            c.name,
            c.label_a,
            c.median_a(),
            c.label_b,
            c.median_b(),
            c.test.u_a,
            c.test.p
        );
    }
}

fn compare(o: &Opts) -> CmdResult {
    let out = o.out("runs/compare");
    let comparisons = if let (Some(a), Some(b)) = (&o.returns_a, &o.returns_b) {
        let sa = a.iter().map(|p| mean_return(p)).collect::<Result<Vec<_>, _>>()?;
        let sb = b.iter().map(|p| mean_return(p)).collect::<Result<Vec<_>, _>>()?;
        vec![Comparison::new("returns", "a", "b", sa, sb).map_err(|e| e.to_string())?]
    } else {
        let task = o.task();
        let spec = SuiteSpec {
            task,
            step_limit: o.steps.unwrap_or_else(|| ExperimentSpec::default_steps(task)),
            n_policies: o.policies.unwrap_or(10),
            eval_snapshot: o.snapshot_index,
            max_iterations: o.max_iterations(),
            recalibrate: o.recalibrate.unwrap_or(false),
            seed: o.seed(),
            threads: o.threads.unwrap_or(0),
            sac: o.sac.clone().unwrap_or_default(),
            ..SuiteSpec::default()
        };
        let series = o.load_series()?;
        let report = run_experiment(&spec, &series).map_err(|e| e.to_string())?;
        let mut curves = Vec::new();
        for g in &report.groups {
            let merged = merge_logs(&g.logs());
            write(
                &out.join(format!("episodes_{}.csv", g.label())),
                &episodes_csv(&merged).map_err(|e| e.to_string())?,
            )?;
            curves.push((g.label(), merged));
        }
        let refs: Vec<(String, &TrainingLog)> = curves.iter().map(|(n, l)| (n.clone(), l)).collect();
        write(&out.join("training_curves.svg"), &training_curves_svg(&refs, 50))?;
        report.comparisons
    };
    write(&out.join("scores.csv"), &scores_csv(&comparisons).map_err(|e| e.to_string())?)?;
    write(&out.join("comparisons.csv"), &comparisons_csv(&comparisons).map_err(|e| e.to_string())?)?;
    write(&out.join("comparisons.svg"), &comparisons_svg(&comparisons))?;
    print_comparisons(&comparisons);
    Ok(())
}

/// Concatenates per-policy logs, averaging returns of episodes with the same
/// index so a group plots as one curve.
fn merge_logs(logs: &[&TrainingLog]) -> TrainingLog {
    let n = logs.iter().map(|l| l.episodes.len()).min().unwrap_or(0);
    let episodes = (0..n)
        .map(|i| {
            let eps: Vec<&EpisodeLog> = logs.iter().map(|l| &l.episodes[i]).collect();
            EpisodeLog {
                episode: i,
                end_step: (eps.iter().map(|e| e.end_step as f64).sum::<f64>() / eps.len() as f64).round() as u64,
                total_reward: eps.iter().map(|e| e.total_reward).sum::<f64>() / eps.len() as f64,
                length: (eps.iter().map(|e| e.length as f64).sum::<f64>() / eps.len() as f64).round() as u32,
                snapshot_index: eps[0].snapshot_index,
            }
        })
        .collect();
    TrainingLog {
        episodes,
        evals: Vec::new(),
        steps_run: logs.iter().map(|l| l.steps_run).max().unwrap_or(0),
        ..TrainingLog::default()
    }
}

fn read_episodes(text: &str) -> Result<TrainingLog, String> {
    let mut episodes = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |e: &dyn std::fmt::Display| format!("episodes line {}: {e}", i + 1);
        if f.len() != 5 {
            return Err(bad(&"expected 5 fields"));
        }
        episodes.push(EpisodeLog {
            episode: f[0].parse().map_err(|e| bad(&e))?,
            end_step: f[1].parse().map_err(|e| bad(&e))?,
            total_reward: f[2].parse().map_err(|e| bad(&e))?,
            length: f[3].parse().map_err(|e| bad(&e))?,
            snapshot_index: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|e| bad(&e))?) },
        });
    }
    Ok(TrainingLog { episodes, ..TrainingLog::default() })
}

fn plot(o: &Opts) -> CmdResult {
    let input = o.input.clone().ok_or("plot needs --input (scores.csv or episodes.csv)")?;
    let text = fs::read_to_string(&input).map_err(|e| format!("{}: {e}", input.display()))?;
    let header = text.lines().next().unwrap_or_default();
    let svg = if header.starts_with("comparison,group") {
        comparisons_svg(&read_scores_csv(&text).map_err(|e| e.to_string())?)
    } else if header.starts_with("episode,end_step") {
        let log = read_episodes(&text)?;
        let name = input.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        training_curves_svg(&[(name, &log)], 50)
    } else {
        return Err(format!("{}: unrecognised CSV header `{header}`", input.display()));
    };
    let out = o.out.clone().unwrap_or_else(|| input.with_extension("svg"));
    write(&out, &svg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, run): (Opts, fn(&Opts) -> CmdResult) = match cli.command {
        Command::GenData(o) => (o, gen_data),
        Command::BuildSim(o) => (o, build_sim),
        Command::Train(o) => (o, train),
        Command::Eval(o) => (o, eval),
        Command::Compare(o) => (o, compare),
        Command::Plot(o) => (o, plot),
    };
    match opts.resolve().and_then(|o| run(&o)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
