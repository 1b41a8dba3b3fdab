//! Synthetic multi-electrode array recordings.
//!
//! Each stimulus produces a non-burst response whose per-channel rate is
//! Gamma distributed with a mean that grows with stimulus frequency and
//! decays with time since the first recording (fatigue). A fraction of
//! stimuli instead evoke a burst: a much higher rate spread over most of
//! the array. Participation ratios of the two populations do not overlap,
//! so burst labels are recoverable from the event files.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaCdf};
use thiserror::Error;

use crate::spike_pipeline::{RecordingConfig, RecordingSession, SpikeEvent, StimEvent};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("unsupported stimulus frequency {0} Hz")]
    UnsupportedFrequency(f64),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, GenError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_channels: usize,
    pub n_patterns: usize,
    /// Mean non-burst rate at 5 Hz and t = 0.
    pub base_mean_hz: f64,
    /// Relative mean increase per octave above 5 Hz.
    pub freq_gain: f64,
    /// Exponential decay of the mean, per minute.
    pub fatigue_rate: f64,
    pub gamma_shape: f64,
    pub burst_prob: f64,
    pub burst_participation: (f64, f64),
    pub nonburst_participation: (f64, f64),
    pub burst_rate_multiplier: (f64, f64),
    /// Pause between frequency conditions, seconds.
    pub condition_gap_s: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_channels: 1024,
            n_patterns: 100,
            base_mean_hz: 30.0,
            freq_gain: 0.25,
            fatigue_rate: 0.004,
            gamma_shape: 4.0,
            burst_prob: 0.15,
            burst_participation: (0.6, 0.9),
            nonburst_participation: (0.05, 0.3),
            burst_rate_multiplier: (3.0, 6.0),
            condition_gap_s: 1.0,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64, max: f64) -> Result<()> {
    if !(min <= lo && lo <= hi && hi <= max) {
        return Err(GenError::InvalidParams(format!(
            "{name} range ({lo}, {hi}) must be ordered within [{min}, {max}]"
        )));
    }
    Ok(())
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_patterns == 0 {
            return Err(GenError::InvalidParams(
                "n_channels and n_patterns must be >= 1".into(),
            ));
        }
        if !(self.base_mean_hz > 0.0) || !(self.gamma_shape > 0.0) {
            return Err(GenError::InvalidParams(
                "base mean and gamma shape must be positive".into(),
            ));
        }
        if !(self.freq_gain >= 0.0) || !(self.fatigue_rate >= 0.0) {
            return Err(GenError::InvalidParams(
                "frequency gain and fatigue rate must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.burst_prob) {
            return Err(GenError::InvalidParams("burst_prob must be in [0, 1]".into()));
        }
        check_range("burst_participation", self.burst_participation, 0.0, 1.0)?;
        check_range("nonburst_participation", self.nonburst_participation, 0.0, 1.0)?;
        check_range("burst_rate_multiplier", self.burst_rate_multiplier, 1.0, f64::MAX)?;
        if !(self.condition_gap_s >= 0.0) {
            return Err(GenError::InvalidParams("condition gap must be >= 0".into()));
        }
        Ok(())
    }

    pub fn recording_config(&self) -> RecordingConfig {
        RecordingConfig {
            n_channels: self.n_channels,
            ..RecordingConfig::default()
        }
    }
}

/// Ground-truth mean of the non-burst rate distribution:
/// `mu0 * (1 + gain * log2(f / 5)) * exp(-lambda * t)`.
pub fn true_nonburst_mean(params: &GenParams, freq_hz: f64, t_offset_min: f64) -> Result<f64> {
    if !RecordingConfig::default().frequencies_hz.contains(&freq_hz) {
        return Err(GenError::UnsupportedFrequency(freq_hz));
    }
    Ok(params.base_mean_hz
        * (1.0 + params.freq_gain * (freq_hz / 5.0).log2())
        * (-params.fatigue_rate * t_offset_min).exp())
}

/// Probability mass of the true non-burst distribution in each histogram
/// bin; the last bin absorbs the upper tail.
pub fn true_bin_probs(
    params: &GenParams,
    freq_hz: f64,
    t_offset_min: f64,
    edges: &[f64],
) -> Result<Vec<f64>> {
    let mean = true_nonburst_mean(params, freq_hz, t_offset_min)?;
    let dist = GammaCdf::new(params.gamma_shape, params.gamma_shape / mean)
        .map_err(|e| GenError::InvalidParams(e.to_string()))?;
    let n = edges.len() - 1;
    Ok((0..n)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { dist.cdf(edges[i]) };
            let hi = if i == n - 1 { 1.0 } else { dist.cdf(edges[i + 1]) };
            hi - lo
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthLabel {
    pub stim_index: usize,
    pub is_burst: bool,
    pub x_f_true: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedSession {
    pub session: RecordingSession,
    /// One label per stimulus, in stimulus time order.
    pub truth: Vec<TruthLabel>,
}

impl GeneratedSession {
    pub fn spikes_csv(&self) -> String {
        let mut out = String::from("time_s,channel\n");
        for s in &self.session.spike_events {
            let _ = writeln!(out, "{},{}", s.time_s, s.channel);
        }
        out
    }

    pub fn stims_csv(&self) -> String {
        let mut out = String::from("time_s,pattern_id,freq_hz\n");
        for s in &self.session.stim_events {
            let _ = writeln!(out, "{},{},{}", s.time_s, s.pattern_id, s.freq_hz);
        }
        out
    }

    pub fn truth_csv(&self) -> String {
        let mut out = String::from("stim_index,is_burst,x_f_true\n");
        for t in &self.truth {
            let _ = writeln!(out, "{},{},{}", t.stim_index, t.is_burst as u8, t.x_f_true);
        }
        out
    }
}

/// Generates one recording: every frequency condition presents
/// `n_patterns` stimuli in random order, conditions themselves shuffled.
pub fn gen_session<R: Rng + ?Sized>(
    params: &GenParams,
    t_offset_min: f64,
    rng: &mut R,
) -> Result<GeneratedSession> {
    params.validate()?;
    let config = params.recording_config();
    let n = config.n_channels;
    let window = config.window_len();

    let mut order: Vec<usize> = (0..config.frequencies_hz.len()).collect();
    order.shuffle(rng);

    let mut stims = Vec::with_capacity(order.len() * params.n_patterns);
    let mut spikes = Vec::new();
    let mut truth = Vec::with_capacity(stims.capacity());
    let mut clock = 1.0;

    for &fi in &order {
        let freq = config.frequencies_hz[fi];
        let mean = true_nonburst_mean(params, freq, t_offset_min)?;
        let gamma = Gamma::new(params.gamma_shape, mean / params.gamma_shape)
            .map_err(|e| GenError::InvalidParams(e.to_string()))?;
        let mut patterns: Vec<usize> = (0..params.n_patterns).collect();
        patterns.shuffle(rng);
        let isi = 1.0 / freq;

        for (k, &pattern_id) in patterns.iter().enumerate() {
            let t_stim = clock + k as f64 * isi;
            let is_burst = rng.random::<f64>() < params.burst_prob;
            let mut x_f = gamma.sample(rng);
            let (p_lo, p_hi) = if is_burst {
                let (m_lo, m_hi) = params.burst_rate_multiplier;
                x_f *= m_lo + (m_hi - m_lo) * rng.random::<f64>();
                params.burst_participation
            } else {
                params.nonburst_participation
            };
            let participation = p_lo + (p_hi - p_lo) * rng.random::<f64>();
            let total = (x_f * window * n as f64).round() as usize;
            let subset = ((participation * n as f64).round() as usize).clamp(1, n);

            let channels: Vec<usize> = if total >= subset {
                let chosen = index::sample(rng, n, subset).into_vec();
                let mut ch = chosen.clone();
                ch.extend((subset..total).map(|_| chosen[rng.random_range(0..subset)]));
                ch
            } else {
                index::sample(rng, n, total).into_vec()
            };
            for channel in channels {
                let frac = 0.05 + 0.9 * rng.random::<f64>();
                spikes.push(SpikeEvent {
                    time_s: t_stim + config.window_start + window * frac,
                    channel,
                });
            }
            truth.push((t_stim, is_burst, x_f));
            stims.push(StimEvent {
                time_s: t_stim,
                pattern_id,
                freq_hz: freq,
            });
        }
        clock += params.n_patterns as f64 * isi + params.condition_gap_s;
    }

    let truth = truth
        .into_iter()
        .enumerate()
        .map(|(stim_index, (_, is_burst, x_f_true))| TruthLabel {
            stim_index,
            is_burst,
            x_f_true,
        })
        .collect();
    let session = RecordingSession::new(spikes, stims, config, t_offset_min)
        .map_err(|e| GenError::InvalidParams(e.to_string()))?;
    Ok(GeneratedSession { session, truth })
}

/// Sessions at offsets `0, interval, ..., (n-1) * interval` minutes.
pub fn gen_series<R: Rng + ?Sized>(
    params: &GenParams,
    n_snapshots: usize,
    interval_min: f64,
    rng: &mut R,
) -> Result<Vec<GeneratedSession>> {
    if n_snapshots == 0 {
        return Err(GenError::InvalidParams("n_snapshots must be >= 1".into()));
    }
    (0..n_snapshots)
        .map(|i| gen_session(params, i as f64 * interval_min, rng))
        .collect()
}
