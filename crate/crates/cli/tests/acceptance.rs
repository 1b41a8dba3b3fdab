//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. `ACCEPTANCE_CRITERIA=1,2,5` restricts the
//! run to a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use animat_core::envs::{map_rate_1thr, map_rate_9thr, Condition, TaskKind};
use animat_core::harness::{
    available_threads, evaluate, parallel_map, run_experiment, train_animat, EvalOptions,
    ExperimentSpec, SuiteReport, SuiteSpec,
};
use animat_core::neuron_sim::{NeuronSnapshot, SnapshotSeries};
use animat_core::rl::sac::{alpha_loss, critic_loss, critic_targets, policy_entropy, policy_loss};
use animat_core::rl::{grad_check, Batch, MlpNet, SacConfig, SacLearner, Transition};
use animat_core::seeded_rng;
use animat_core::spike_pipeline::{
    evoked_samples, otsu_threshold, RecordingConfig, RecordingSession, SpikeEvent, StimEvent,
};
use animat_core::stats::{mann_whitney_exact, mann_whitney_u, u_null_counts};
use animat_core::synth_mea::{gen_series, GenParams};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Runs `f` and also fails the criterion when it exceeds `limit`.
fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let elapsed = t.elapsed();
    o.detail = format!("{} [{:.1}s]", o.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail += &format!(" over the {:.0}s limit", limit.as_secs_f64());
        }
    }
    o
}

// ---------------------------------------------------------------- 1

fn c1_rate_exactness() -> Outcome {
    let mut rng = seeded_rng(101);
    for fixture in 0..100 {
        let n_channels = rng.random_range(1..2048);
        let window_start = rng.random_range(0.0..0.005);
        let window_end = window_start + rng.random_range(0.001..0.02);
        let config = RecordingConfig { n_channels, window_start, window_end, ..RecordingConfig::default() };
        let n_stims = rng.random_range(1..40);
        let stims: Vec<StimEvent> = (0..n_stims)
            .map(|i| StimEvent {
                time_s: i as f64 * 0.1 + rng.random_range(0.0..0.05),
                pattern_id: i,
                freq_hz: config.frequencies_hz[rng.random_range(0..config.frequencies_hz.len())],
            })
            .collect();
        let mut spikes = Vec::new();
        for s in &stims {
            for _ in 0..rng.random_range(0..300) {
                let time_s = s.time_s + rng.random_range(0.0..0.04);
                spikes.push(SpikeEvent { time_s, channel: rng.random_range(0..n_channels) });
            }
            // Exactly on the window edges.
            spikes.push(SpikeEvent { time_s: s.time_s + window_start, channel: 0 });
            spikes.push(SpikeEvent { time_s: s.time_s + window_end, channel: 0 });
        }
        let session = RecordingSession::new(spikes.clone(), stims.clone(), config, 0.0).unwrap();
        let got = evoked_samples(&session);
        let mut sorted_stims = stims.clone();
        sorted_stims.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        for (stim, sample) in sorted_stims.iter().zip(&got) {
            let lo = stim.time_s + window_start;
            let hi = stim.time_s + window_end;
            let total = spikes.iter().filter(|s| s.time_s >= lo && s.time_s < hi).count();
            let want = total as f64 / ((window_end - window_start) * n_channels as f64);
            if sample.x_f.to_bits() != want.to_bits() {
                return outcome(false, format!("fixture {fixture}: x_f {} != {want}", sample.x_f));
            }
        }
        if got.len() != stims.len() {
            return outcome(false, format!("fixture {fixture}: {} samples for {} stimuli", got.len(), stims.len()));
        }
    }
    outcome(true, "100 fixtures bit-identical to S_total/(T*N)")
}

// ---------------------------------------------------------------- 2

/// Every cut between distinct sorted values, scored by `w0 w1 (m0 - m1)^2`.
fn otsu_oracle(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out = Vec::new();
    for k in 1..v.len() {
        if v[k - 1] == v[k] {
            continue;
        }
        let (lo, hi) = v.split_at(k);
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        let w0 = lo.len() as f64 / n;
        out.push((0.5 * (v[k - 1] + v[k]), w0 * (1.0 - w0) * (m0 - m1).powi(2)));
    }
    out
}

fn c2_otsu() -> Outcome {
    let mut rng = seeded_rng(202);
    for case in 0..200 {
        let n = rng.random_range(2..=500);
        let coarse = rng.random_bool(0.3);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = if rng.random_bool(0.5) { rng.random_range(0.0..0.4) } else { rng.random_range(0.3..1.0) };
                if coarse { (x * 20.0).round() / 20.0 } else { x }
            })
            .collect();
        let cuts = otsu_oracle(&values);
        let got = otsu_threshold(&values);
        if cuts.is_empty() {
            if got.is_ok() {
                return outcome(false, format!("case {case}: constant input accepted"));
            }
            continue;
        }
        let got = got.unwrap();
        let best = cuts.iter().map(|c| c.1).fold(f64::MIN, f64::max);
        // First cut within rounding of the maximum; a near-tie may go either way.
        let tol = 1e-12 * best.max(1e-300);
        let acceptable: Vec<f64> = cuts.iter().filter(|c| c.1 >= best - tol).map(|c| c.0).collect();
        if !acceptable.contains(&got.threshold) || (got.between_class_variance - best).abs() > 1e-9 * best {
            return outcome(
                false,
                format!("case {case} (n={n}): threshold {} vs oracle {:?}", got.threshold, acceptable),
            );
        }
    }
    outcome(true, "200 lists match the exhaustive between-class-variance scan")
}

// ---------------------------------------------------------------- 3

fn c3_sampler() -> Outcome {
    let mut rng = seeded_rng(303);
    let config = RecordingConfig::default();
    let n_bins = config.n_bins;
    let probs: Vec<Vec<f64>> = (0..config.frequencies_hz.len())
        .map(|_| {
            let raw: Vec<f64> =
                (0..n_bins).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() }).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|p| p / s).collect()
        })
        .collect();
    let snap = NeuronSnapshot {
        frequencies_hz: config.frequencies_hz.clone(),
        bin_edges_hz: config.bin_edges(),
        probs,
        percentiles: (0..=10).map(|k| 12.0 * k as f64).collect(),
        n_samples: vec![100; config.frequencies_hz.len()],
        t_offset_min: 0.0,
        otsu_threshold: 0.5,
    };
    snap.validate().unwrap();
    let f = rng.random_range(0..snap.n_frequencies());
    let n = 100_000;
    let mut counts = vec![0usize; n_bins];
    for _ in 0..n {
        let x = snap.sample_response(f, &mut rng).unwrap();
        if !(0.0..120.0).contains(&x) {
            return outcome(false, format!("sample {x} outside [0, 120)"));
        }
        let bin = snap.bin_edges_hz[1..].partition_point(|&e| e <= x);
        counts[bin] += 1;
    }
    let mut worst: f64 = 0.0;
    for (b, (&c, &p)) in counts.iter().zip(&snap.probs[f]).enumerate() {
        let dev = (c as f64 / n as f64 - p).abs();
        let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        if dev > bound {
            return outcome(false, format!("bin {b}: |{} - {p}| > {bound}", c as f64 / n as f64));
        }
        if bound > 0.0 {
            worst = worst.max(dev / bound);
        }
    }
    outcome(true, format!("{n} draws, worst deviation {worst:.2} of the 3-sigma bound"))
}

// ---------------------------------------------------------------- 4

fn oracle_1thr(rate: f64, p: &[f64]) -> f64 {
    if rate >= p[5] { 1.0 } else { -1.0 }
}

/// Bucket `b = 1 + #{inner thresholds strictly below rate}`; levels step by
/// 0.2 from -1 and skip zero.
fn oracle_9thr(rate: f64, p: &[f64]) -> f64 {
    let b = 1 + (1..=9).filter(|&j| p[j] < rate).count();
    if b <= 5 { -1.0 + 0.2 * (b - 1) as f64 } else { 0.2 * (b - 5) as f64 }
}

fn c4_mapping() -> Outcome {
    let mut rng = seeded_rng(404);
    for pair in 0..10_000 {
        let mut table: Vec<f64> = (0..11).map(|_| rng.random_range(0.0..100.0)).collect();
        if rng.random_bool(0.1) {
            let i = rng.random_range(0..10);
            table[i + 1] = table[i];
        }
        table.sort_by(f64::total_cmp);
        let rate = match rng.random_range(0..4) {
            0 => table[rng.random_range(0..11)],
            _ => rng.random_range(table[0] - 5.0..table[10] + 5.0),
        };
        for (name, got, want) in [
            ("1thr", map_rate_1thr(rate, &table), oracle_1thr(rate, &table)),
            ("9thr", map_rate_9thr(rate, &table), oracle_9thr(rate, &table)),
        ] {
            if (got - want).abs() > 1e-12 {
                return outcome(false, format!("pair {pair} {name}: rate {rate} -> {got}, oracle {want}"));
            }
        }
    }
    let table: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
    let boundaries = [
        (map_rate_1thr(table[0], &table), -1.0),
        (map_rate_1thr(table[5], &table), 1.0),
        (map_rate_1thr(table[10], &table), 1.0),
        (map_rate_9thr(table[0], &table), -1.0),
        (map_rate_9thr(table[5], &table), -0.2),
        (map_rate_9thr(table[10], &table), 1.0),
    ];
    if let Some((i, (got, want))) = boundaries.iter().enumerate().find(|(_, (g, w))| g != w) {
        return outcome(false, format!("boundary case {i}: {got} != {want}"));
    }
    outcome(true, "10^4 random pairs and P0/P50/P100 boundaries agree")
}

// ---------------------------------------------------------------- 5

/// U null distribution by enumerating every split of `m + n` ranks.
fn enumerate_u(m: usize, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; m * n + 1];
    for mask in 0u32..(1 << (m + n)) {
        if mask.count_ones() as usize != m {
            continue;
        }
        // U = pairs (a in group A, b in group B) with rank(a) > rank(b).
        let mut u = 0;
        let mut b_seen = 0;
        for r in 0..m + n {
            if mask & (1 << r) != 0 {
                u += b_seen;
            } else {
                b_seen += 1;
            }
        }
        counts[u] += 1.0;
    }
    counts
}

fn c5_mann_whitney() -> Outcome {
    let a: Vec<f64> = (0..10).map(f64::from).collect();
    let b: Vec<f64> = (10..20).map(f64::from).collect();
    let t = mann_whitney_u(&a, &b).unwrap();
    if t.u_a != 0.0 || (t.p - 1.83e-4).abs() > 2e-5 {
        return outcome(false, format!("U={} p={}", t.u_a, t.p));
    }
    let mut rng = seeded_rng(505);
    for m in 1..12 {
        for n in 1..=12 - m {
            let oracle = enumerate_u(m, n);
            if u_null_counts(m, n) != oracle {
                return outcome(false, format!("null counts differ for ({m}, {n})"));
            }
            let total: f64 = oracle.iter().sum();
            let mean = (m * n) as f64 / 2.0;
            for _ in 0..5 {
                let xs: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let pairs: usize =
                    xs.iter().map(|x| ys.iter().filter(|y| x > y).count()).sum();
                let exact = mann_whitney_exact(&xs, &ys).unwrap();
                let approx = mann_whitney_u(&xs, &ys).unwrap();
                let u = pairs as f64;
                let p_less: f64 = oracle[..=pairs].iter().sum::<f64>() / total;
                let p_greater: f64 = oracle[pairs..].iter().sum::<f64>() / total;
                let p_two: f64 = oracle
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| (*k as f64 - mean).abs() >= (u - mean).abs())
                    .map(|(_, c)| c)
                    .sum::<f64>()
                    / total;
                let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
                if exact.u_a != u
                    || approx.u_a != u
                    || !close(exact.p_less, p_less)
                    || !close(exact.p_greater, p_greater)
                    || !close(exact.p_two_sided, p_two)
                {
                    return outcome(false, format!("({m}, {n}): U {u} exact {exact:?} oracle {p_less} {p_greater} {p_two}"));
                }
            }
        }
    }
    outcome(true, format!("U=0, n=10/10 -> p={:.3e}; enumeration agrees for n1+n2<=12", t.p))
}

// ---------------------------------------------------------------- 6

/// Smallest `|pre-activation|` over the hidden units of `net` at input `x`.
fn kink_distance(net: &MlpNet, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut closest = f64::INFINITY;
    for l in &net.layers[..net.layers.len() - 1] {
        h = (0..l.b.len())
            .map(|j| {
                let z = l.b[j] + h.iter().enumerate().map(|(i, v)| v * l.w[[i, j]]).sum::<f64>();
                closest = closest.min(z.abs());
                z.max(0.0)
            })
            .collect();
    }
    closest
}

/// Random transitions, redrawn while an observation sits within `margin`
/// of a rectifier kink of any of `nets`: a central difference straddling a
/// kink does not estimate the derivative.
fn random_batch(rng: &mut impl Rng, n: usize, obs_dim: usize, n_actions: usize, nets: &[&MlpNet]) -> Batch {
    const MARGIN: f64 = 1e-3;
    let mut ts = Vec::with_capacity(n);
    while ts.len() < n {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if nets.iter().any(|net| kink_distance(net, &obs) < MARGIN) {
            continue;
        }
        ts.push(Transition {
            obs,
            action: rng.random_range(0..n_actions),
            reward: rng.random_range(-1.0..1.0),
            next_obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: rng.random_bool(0.2),
        });
    }
    Batch::from_transitions(obs_dim, &ts)
}

fn c6_gradients() -> Outcome {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut rng = seeded_rng(606);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for _ in 0..20 {
        let config = SacConfig { hidden: vec![32, 32], ..SacConfig::default() };
        let (obs_dim, n_actions) = (rng.random_range(2..6), rng.random_range(2..6));
        let learner = SacLearner::new(config, obs_dim, n_actions, &mut rng);
        let batch = random_batch(&mut rng, 64, obs_dim, n_actions, &[&learner.policy, &learner.q1, &learner.q2]);
        let alpha = rng.random_range(0.05..1.0);
        let targets =
            critic_targets(&learner.policy, &learner.q1_target, &learner.q2_target, &batch, alpha, 0.99);
        let critic = |q: &MlpNet| {
            let (l, g, _) = critic_loss(q, batch.obs.view(), &batch.actions, &targets);
            (l, g)
        };
        let q_min = {
            let mut m = learner.q1.forward_batch(batch.obs.view());
            m.zip_mut_with(&learner.q2.forward_batch(batch.obs.view()), |x, &y| *x = x.min(y));
            m
        };
        let pol = |p: &MlpNet| {
            let (l, g, _) = policy_loss(p, batch.obs.view(), &q_min, alpha);
            (l, g)
        };
        let ent = |p: &MlpNet| policy_entropy(p, batch.obs.view());
        let checks = [
            ("critic q1", grad_check(&learner.q1, critic, H, FLOOR)),
            ("critic q2", grad_check(&learner.q2, critic, H, FLOOR)),
            ("policy", grad_check(&learner.policy, pol, H, FLOOR)),
            ("entropy", grad_check(&learner.policy, ent, H, FLOOR)),
        ];
        for (name, e) in checks {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
        let (entropy, _) = policy_entropy(&learner.policy, batch.obs.view());
        let la = learner.log_alpha + rng.random_range(-1.0..1.0);
        let (_, analytic) = alpha_loss(la, entropy, learner.target_entropy);
        let numeric = (alpha_loss(la + H, entropy, learner.target_entropy).0
            - alpha_loss(la - H, entropy, learner.target_entropy).0)
            / (2.0 * H);
        let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        let w = worst.entry("alpha").or_insert(0.0);
        *w = w.max(e);
    }
    let pass = worst.values().all(|&e| e < 1e-4);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("max relative error over 20 batches: {detail}"))
}

// ---------------------------------------------------------------- 7

fn c7_baseline_cartpole() -> Outcome {
    let spec = ExperimentSpec {
        task: TaskKind::Cartpole,
        condition: Condition::Baseline,
        shadowing: false,
        step_limit: 200_000,
        eval_every: 5000,
        eval_episodes: 30,
        stop_at_return: Some(115.0),
        ..ExperimentSpec::default()
    };
    let runs = parallel_map(10, available_threads(), |i| train_animat(&spec, None, 7000 + i as u64).unwrap());
    let best: Vec<f64> = runs
        .iter()
        .map(|r| r.log.evals.iter().map(|e| e.mean_length).fold(0.0, f64::max))
        .collect();
    let ok = best.iter().filter(|&&l| l >= 115.0).count();
    let steps: Vec<u64> = runs.iter().map(|r| r.log.steps_run).collect();
    outcome(ok >= 8, format!("{ok}/10 seeds reach mean survival >= 115 (best {best:?}, steps {steps:?})"))
}

// ---------------------------------------------------------------- 8

fn c8_baseline_navigation() -> Outcome {
    let spec = ExperimentSpec {
        task: TaskKind::Navigation,
        condition: Condition::Baseline,
        shadowing: false,
        step_limit: 20_000,
        max_iterations: Some(60),
        eval_every: 2000,
        eval_episodes: 1,
        // Any positive return needs the goal bonus.
        stop_at_return: Some(0.0),
        ..ExperimentSpec::default()
    };
    let opts = EvalOptions { n_episodes: 1, seed: 8, max_iterations: Some(60), ..EvalOptions::default() };
    let results = parallel_map(10, available_threads(), |i| {
        let out = train_animat(&spec, None, 8000 + i as u64).unwrap();
        let trained = evaluate(&out.checkpoint, None, &opts, None).unwrap()[0];
        let untrained = evaluate(&out.initial, None, &opts, None).unwrap()[0];
        (trained, untrained)
    });
    let reached = results.iter().filter(|(t, _)| t.terminal).count();
    let trained: Vec<f64> = results.iter().map(|(t, _)| t.total_reward).collect();
    let untrained: Vec<f64> = results.iter().map(|(_, u)| u.total_reward).collect();
    let test = mann_whitney_u(&untrained, &trained).unwrap();
    let higher = animat_core::stats::mean(&trained) > animat_core::stats::mean(&untrained);
    outcome(
        reached >= 8 && higher && test.p < 0.01,
        format!(
            "{reached}/10 reach the goal; mean return {:.2} vs untrained {:.2}, p={:.2e}",
            animat_core::stats::mean(&trained),
            animat_core::stats::mean(&untrained),
            test.p
        ),
    )
}

// ---------------------------------------------------------------- 9-11

fn series(fatigue_rate: f64) -> SnapshotSeries {
    let params = GenParams { fatigue_rate, ..GenParams::default() };
    let snaps = gen_series(&params, 14, 10.0, &mut seeded_rng(7))
        .unwrap()
        .iter()
        .map(|g| animat_core::spike_pipeline::snapshot_from_session(&g.session).unwrap().0)
        .collect();
    SnapshotSeries::new(snaps, 1).unwrap()
}

fn suite(task: TaskKind) -> SuiteReport {
    let spec = SuiteSpec {
        task,
        step_limit: match task {
            TaskKind::Cartpole => 20_000,
            TaskKind::Navigation => 30_000,
        },
        n_policies: 10,
        max_iterations: (task == TaskKind::Navigation).then_some(60),
        threads: available_threads(),
        ..SuiteSpec::default()
    };
    let s = series(0.004);
    assert_eq!(s.last().t_offset_min, 130.0);
    run_experiment(&spec, &s).unwrap()
}

fn judge(reports: &[(TaskKind, SuiteReport)], names: &[&str], alpha: f64) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, report) in reports {
        for name in names {
            let c = report.comparisons.iter().find(|c| c.name == *name).unwrap();
            let ok = c.b_wins(alpha);
            pass &= ok;
            parts.push(format!(
                "{} {}: {} {:.3} < {} {:.3} p={:.2e}{}",
                task.name(),
                c.name,
                c.label_a,
                c.median_a(),
                c.label_b,
                c.median_b(),
                c.test.p,
                if ok { "" } else { " (not met)" }
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------- 12

fn animat(args: &[&str], cwd: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_animat")).args(args).current_dir(cwd).output().unwrap();
    assert!(
        out.status.success(),
        "animat {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn cli_pipeline(root: &Path) {
    let _ = fs::remove_dir_all(root);
    fs::create_dir_all(root).unwrap();
    fs::write(
        root.join("config.json"),
        r#"{
  "task": "cartpole",
  "seed": 5,
  "n_snapshots": 3,
  "gen": { "n_patterns": 20, "n_channels": 128 },
  "sac": { "hidden": [16, 16], "warmup_steps": 100, "batch_size": 16 }
}
"#,
    )
    .unwrap();
    let c = ["--config", "config.json"];
    let run = |extra: &[&str]| {
        let mut args = vec![extra[0]];
        args.extend(c);
        args.extend(&extra[1..]);
        animat(&args, root);
    };
    run(&["gen-data", "--data-dir", "data"]);
    run(&["build-sim", "--data-dir", "data", "--snapshots-dir", "snaps"]);
    run(&["train", "--snapshots-dir", "snaps", "--steps", "400", "--eval-every", "200", "--episodes", "3", "--out", "train"]);
    run(&["eval", "--snapshots-dir", "snaps", "--checkpoint", "train/checkpoint.json", "--episodes", "5", "--trajectory", "true", "--out", "eval"]);
    run(&["eval", "--snapshots-dir", "snaps", "--checkpoint", "train/initial_checkpoint.json", "--episodes", "5", "--out", "eval0"]);
    run(&["compare", "--returns-a", "eval0/returns.csv", "--returns-b", "eval/returns.csv", "--out", "cmp_files"]);
    run(&["compare", "--snapshots-dir", "snaps", "--steps", "300", "--policies", "2", "--threads", "2", "--out", "cmp"]);
    run(&["plot", "--input", "cmp/scores.csv", "--out", "plot"]);
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c12_determinism() -> Outcome {
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR"));
    let (a, b) = (tmp.join("acceptance_a"), tmp.join("acceptance_b"));
    cli_pipeline(&a);
    cli_pipeline(&b);
    let (fa, fb) = (files(&a), files(&b));
    let csvs = fa.keys().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    if fa.keys().ne(fb.keys()) {
        return outcome(false, "runs produced different file sets");
    }
    if let Some(p) = fa.keys().find(|p| fa[*p] != fb[*p]) {
        return outcome(false, format!("{} differs between runs", p.display()));
    }
    outcome(true, format!("{} files ({csvs} CSV) byte-identical across two runs", fa.len()))
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: u32| only.as_ref().is_none_or(|o| o.contains(&k));
    let secs = |s: u64| Some(Duration::from_secs(s));

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |k: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {k:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o));
    };

    if wanted(1) {
        record(1, "rate exactness", timed(secs(1), c1_rate_exactness));
    }
    if wanted(2) {
        record(2, "otsu oracle", timed(secs(5), c2_otsu));
    }
    if wanted(3) {
        record(3, "sampler consistency", timed(secs(5), c3_sampler));
    }
    if wanted(4) {
        record(4, "mapping oracle", timed(secs(5), c4_mapping));
    }
    if wanted(5) {
        record(5, "mann-whitney", timed(secs(10), c5_mann_whitney));
    }
    if wanted(6) {
        record(6, "gradient checks", timed(secs(30), c6_gradients));
    }
    if wanted(7) {
        record(7, "baseline cartpole", timed(secs(20 * 60), c7_baseline_cartpole));
    }
    if wanted(8) {
        record(8, "baseline navigation", timed(secs(15 * 60), c8_baseline_navigation));
    }
    if wanted(9) || wanted(10) || wanted(11) {
        let t = Instant::now();
        let reports: Vec<(TaskKind, SuiteReport)> =
            [TaskKind::Cartpole, TaskKind::Navigation].into_iter().map(|k| (k, suite(k))).collect();
        println!("       animat suites trained in {:.1}s", t.elapsed().as_secs_f64());
        if wanted(9) {
            record(9, "learning effect", judge(&reports, &["training"], 0.01));
        }
        if wanted(10) {
            record(10, "condition ordering", judge(&reports, &["control_vs_map1thr", "map1thr_vs_map9thr"], 0.05));
        }
        if wanted(11) {
            record(11, "shadowing effect", judge(&reports, &["frozen_vs_shadow"], 0.05));
        }
    }
    if wanted(12) {
        record(12, "cli determinism", timed(None, c12_determinism));
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
