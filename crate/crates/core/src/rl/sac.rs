//! Discrete-action soft actor-critic.
//!
//! The policy outputs logits over a small action set. Critic targets use
//! the expected soft value under the categorical policy, so no action
//! sampling is needed inside the update:
//!
//! ```text
//! y      = r + gamma (1 - done) sum_a' pi(a'|s') [min Q'(s',a') - alpha log pi(a'|s')]
//! L_Q    = mean (Q(s,a) - y)^2
//! L_pi   = mean sum_a pi(a|s) [alpha log pi(a|s) - min Q(s,a)]
//! L_alpha = log(alpha) (H(pi) - H_target)
//! ```

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Adam, AdamConfig, MlpGrads, MlpNet, ScalarAdam};
use super::replay::Batch;
use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    /// Target entropy as a fraction of `ln(n_actions)`.
    pub target_entropy_ratio: f64,
    pub initial_alpha: f64,
    /// Environment steps between gradient updates.
    pub update_every: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 64,
            warmup_steps: 1000,
            buffer_capacity: 50_000,
            target_entropy_ratio: 0.5,
            initial_alpha: 0.2,
            update_every: 1,
        }
    }
}

impl SacConfig {
    /// Stable hash of the serialized configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Explore,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub alpha: f64,
}

/// Row-wise softmax and log-softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut logp = logits.clone();
    for mut row in logp.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    (logp.mapv(f64::exp), logp)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Soft Bellman targets computed from the target critics.
pub fn critic_targets(
    policy: &MlpNet,
    q1_target: &MlpNet,
    q2_target: &MlpNet,
    batch: &Batch,
    alpha: f64,
    gamma: f64,
) -> Vec<f64> {
    let (p, logp) = softmax_rows(&policy.forward_batch(batch.next_obs.view()));
    let q1 = q1_target.forward_batch(batch.next_obs.view());
    let q2 = q2_target.forward_batch(batch.next_obs.view());
    (0..batch.len())
        .map(|i| {
            let v: f64 = (0..p.ncols())
                .map(|a| p[[i, a]] * (q1[[i, a]].min(q2[[i, a]]) - alpha * logp[[i, a]]))
                .sum();
            let cont = if batch.dones[i] { 0.0 } else { 1.0 };
            batch.rewards[i] + gamma * cont * v
        })
        .collect()
}

/// Mean squared error of `Q(s, a)` against fixed targets. Also returns
/// the full Q table for reuse by the policy step.
pub fn critic_loss(
    q: &MlpNet,
    obs: ArrayView2<f64>,
    actions: &[usize],
    targets: &[f64],
) -> (f64, MlpGrads, Array2<f64>) {
    let (values, cache) = q.forward_cached(obs);
    let n = actions.len() as f64;
    let mut grad = Array2::zeros(values.raw_dim());
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = values[[i, a]] - y;
        loss += err * err;
        grad[[i, a]] = 2.0 * err / n;
    }
    let grads = q.backward(&cache, grad);
    (loss / n, grads, values)
}

/// Policy objective against fixed `min(Q1, Q2)` values. Returns
/// `(loss, grads, mean entropy)`.
pub fn policy_loss(
    policy: &MlpNet,
    obs: ArrayView2<f64>,
    q_min: &Array2<f64>,
    alpha: f64,
) -> (f64, MlpGrads, f64) {
    let (logits, cache) = policy.forward_cached(obs);
    let (p, logp) = softmax_rows(&logits);
    let n = logits.nrows() as f64;
    let g = &logp * alpha - q_min;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut entropy = 0.0;
    for i in 0..logits.nrows() {
        let row_p = p.row(i);
        let row_g = g.row(i);
        let expect: f64 = row_p.dot(&row_g);
        loss += expect;
        entropy -= row_p.dot(&logp.row(i));
        for a in 0..logits.ncols() {
            grad[[i, a]] = row_p[a] * (row_g[a] - expect) / n;
        }
    }
    let grads = policy.backward(&cache, grad);
    (loss / n, grads, entropy / n)
}

/// Mean policy entropy and its gradient.
pub fn policy_entropy(policy: &MlpNet, obs: ArrayView2<f64>) -> (f64, MlpGrads) {
    let (logits, cache) = policy.forward_cached(obs);
    let (p, logp) = softmax_rows(&logits);
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut h = 0.0;
    for i in 0..logits.nrows() {
        let mean_logp: f64 = p.row(i).dot(&logp.row(i));
        h -= mean_logp;
        for a in 0..logits.ncols() {
            grad[[i, a]] = -p[[i, a]] * (logp[[i, a]] - mean_logp) / n;
        }
    }
    (h / n, policy.backward(&cache, grad))
}

/// Temperature loss `log(alpha) (H - H_target)` and its derivative with
/// respect to `log(alpha)`.
pub fn alpha_loss(log_alpha: f64, entropy: f64, target_entropy: f64) -> (f64, f64) {
    let g = entropy - target_entropy;
    (log_alpha * g, g)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacLearner {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub policy: MlpNet,
    pub q1: MlpNet,
    pub q2: MlpNet,
    pub q1_target: MlpNet,
    pub q2_target: MlpNet,
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_alpha: ScalarAdam,
    pub updates: u64,
}

impl SacLearner {
    pub fn new<R: Rng + ?Sized>(
        config: SacConfig,
        obs_dim: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend(&config.hidden);
            s.push(out);
            s
        };
        let policy = MlpNet::new(&sizes(n_actions), rng);
        let q1 = MlpNet::new(&sizes(n_actions), rng);
        let q2 = MlpNet::new(&sizes(n_actions), rng);
        let adam = AdamConfig::with_lr(config.lr);
        Self {
            target_entropy: config.target_entropy_ratio * (n_actions as f64).ln(),
            log_alpha: config.initial_alpha.ln(),
            opt_policy: Adam::new(&policy, adam),
            opt_q1: Adam::new(&q1, adam),
            opt_q2: Adam::new(&q2, adam),
            opt_alpha: ScalarAdam::new(adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            config,
            obs_dim,
            n_actions,
            updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn action_probs(&self, obs: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(softmax(&self.policy.forward(obs)?))
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<usize, RlError> {
        let logits = self.policy.forward(obs)?;
        Ok(match mode {
            ActionMode::Greedy => argmax(&logits),
            ActionMode::Explore => sample_categorical(&softmax(&logits), rng),
        })
    }

    pub fn sac_update(&mut self, batch: &Batch) -> Result<SacStats, RlError> {
        let alpha = self.alpha();
        let targets = critic_targets(
            &self.policy,
            &self.q1_target,
            &self.q2_target,
            batch,
            alpha,
            self.config.gamma,
        );
        let (q1_loss, g1, q1_values) =
            critic_loss(&self.q1, batch.obs.view(), &batch.actions, &targets);
        let (q2_loss, g2, q2_values) =
            critic_loss(&self.q2, batch.obs.view(), &batch.actions, &targets);
        let q_min = ndarray::Zip::from(&q1_values)
            .and(&q2_values)
            .map_collect(|&a, &b| a.min(b));
        let (policy_loss, gp, entropy) =
            policy_loss(&self.policy, batch.obs.view(), &q_min, alpha);

        if ![q1_loss, q2_loss, policy_loss, entropy].iter().all(|v| v.is_finite()) {
            return Err(RlError::NonFinite(format!(
                "update {}: q1_loss={q1_loss} q2_loss={q2_loss} policy_loss={policy_loss} entropy={entropy} alpha={alpha}",
                self.updates
            )));
        }

        self.opt_q1.step(&mut self.q1, &g1);
        self.opt_q2.step(&mut self.q2, &g2);
        self.opt_policy.step(&mut self.policy, &gp);
        let (_, g_alpha) = alpha_loss(self.log_alpha, entropy, self.target_entropy);
        self.opt_alpha.step(&mut self.log_alpha, g_alpha);

        self.q1_target.polyak_from(&self.q1, self.config.tau);
        self.q2_target.polyak_from(&self.q2, self.config.tau);
        self.updates += 1;

        Ok(SacStats {
            q1_loss,
            q2_loss,
            policy_loss,
            entropy,
            alpha: self.alpha(),
        })
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// With probability `flip_prob`, replaces `action` by a uniformly chosen
/// different action.
pub fn flip_action<R: Rng + ?Sized>(
    action: usize,
    n_actions: usize,
    flip_prob: f64,
    rng: &mut R,
) -> usize {
    if n_actions < 2 || flip_prob <= 0.0 || rng.random::<f64>() >= flip_prob {
        return action;
    }
    let other = rng.random_range(0..n_actions - 1);
    if other >= action {
        other + 1
    } else {
        other
    }
}

/// Mean entropy of the policy's action distribution over a batch.
pub fn mean_entropy(policy: &MlpNet, obs: ArrayView2<f64>) -> f64 {
    let (p, logp) = softmax_rows(&policy.forward_batch(obs));
    -(&p * &logp).sum_axis(Axis(1)).mean().unwrap_or(0.0)
}
