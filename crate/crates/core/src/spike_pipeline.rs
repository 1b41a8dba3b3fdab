//! Spike/stimulus event ingestion, evoked-response extraction, burst
//! separation and snapshot construction.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuron_sim::NeuronSnapshot;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{file}: line {line}: {message}")]
    Parse {
        file: &'static str,
        line: u64,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate distribution: all {0} values are identical")]
    Degenerate(usize),
    #[error("percentile of an empty list")]
    EmptyPercentile,
    #[error("no non-burst samples for {0} Hz")]
    MissingFrequency(f64),
    #[error("invalid recording config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Acquisition and histogram settings shared by a day of recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingConfig {
    pub n_channels: usize,
    /// Start of the evoked-response window after each stimulus, seconds.
    pub window_start: f64,
    /// End of the window (exclusive), seconds.
    pub window_end: f64,
    pub frequencies_hz: Vec<f64>,
    pub n_bins: usize,
    pub rate_range_hz: (f64, f64),
}

impl Default for RecordingConfig {
    fn default() -> Self {
        Self {
            n_channels: 1024,
            window_start: 0.002,
            window_end: 0.010,
            frequencies_hz: vec![5.0, 10.0, 20.0, 40.0, 80.0],
            n_bins: 20,
            rate_range_hz: (0.0, 120.0),
        }
    }
}

impl RecordingConfig {
    /// Length of the counting window `T`.
    pub fn window_len(&self) -> f64 {
        self.window_end - self.window_start
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(PipelineError::Config("n_channels must be >= 1".into()));
        }
        if !(self.window_start < self.window_end) || self.window_start < 0.0 {
            return Err(PipelineError::Config(format!(
                "window [{}, {}) is empty",
                self.window_start, self.window_end
            )));
        }
        if self.frequencies_hz.is_empty()
            || self.frequencies_hz.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(PipelineError::Config(
                "frequencies must be non-empty and strictly increasing".into(),
            ));
        }
        if self.n_bins < 2 {
            return Err(PipelineError::Config("n_bins must be >= 2".into()));
        }
        let (lo, hi) = self.rate_range_hz;
        if !(lo < hi) {
            return Err(PipelineError::Config(format!("rate range [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    pub fn frequency_index(&self, freq_hz: f64) -> Option<usize> {
        self.frequencies_hz.iter().position(|&f| f == freq_hz)
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let (lo, hi) = self.rate_range_hz;
        let width = (hi - lo) / self.n_bins as f64;
        (0..=self.n_bins)
            .map(|i| if i == self.n_bins { hi } else { lo + width * i as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub time_s: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimEvent {
    pub time_s: f64,
    pub pattern_id: usize,
    pub freq_hz: f64,
}

/// One recording (all five frequency conditions) taken at `t_offset_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSession {
    pub spike_events: Vec<SpikeEvent>,
    pub stim_events: Vec<StimEvent>,
    pub config: RecordingConfig,
    pub t_offset_min: f64,
}

impl RecordingSession {
    /// Sorts events by time (stably) and checks every session invariant.
    pub fn new(
        mut spike_events: Vec<SpikeEvent>,
        mut stim_events: Vec<StimEvent>,
        config: RecordingConfig,
        t_offset_min: f64,
    ) -> Result<Self> {
        config.validate()?;
        if stim_events.is_empty() {
            return Err(PipelineError::Validation("no stimuli".into()));
        }
        for s in &spike_events {
            if !(s.time_s.is_finite() && s.time_s >= 0.0) {
                return Err(PipelineError::Validation(format!(
                    "spike time {} is not a non-negative number",
                    s.time_s
                )));
            }
            if s.channel >= config.n_channels {
                return Err(PipelineError::Validation(format!(
                    "spike channel {} out of range for {} channels",
                    s.channel, config.n_channels
                )));
            }
        }
        for s in &stim_events {
            if !(s.time_s.is_finite() && s.time_s >= 0.0) {
                return Err(PipelineError::Validation(format!(
                    "stimulus time {} is not a non-negative number",
                    s.time_s
                )));
            }
            if config.frequency_index(s.freq_hz).is_none() {
                return Err(PipelineError::Validation(format!(
                    "stimulus frequency {} Hz is not one of {:?}",
                    s.freq_hz, config.frequencies_hz
                )));
            }
        }
        spike_events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        stim_events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        Ok(Self {
            spike_events,
            stim_events,
            config,
            t_offset_min,
        })
    }
}

/// Summary of the response evoked by a single stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvokedSample {
    pub freq_hz: f64,
    /// Firing rate per channel, `S_total / (T * N)`.
    pub x_f: f64,
    /// Fraction of channels with at least one spike in the window.
    pub participation: f64,
    pub is_burst: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuResult {
    pub threshold: f64,
    pub between_class_variance: f64,
}

#[derive(Debug, Deserialize)]
struct SpikeRow {
    time_s: f64,
    channel: usize,
}

#[derive(Debug, Deserialize)]
struct StimRow {
    time_s: f64,
    pattern_id: usize,
    freq_hz: f64,
}

fn read_rows<R: Read, T: serde::de::DeserializeOwned>(
    input: R,
    file: &'static str,
    header: &[&str],
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| PipelineError::Parse {
        file,
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != header {
        return Err(PipelineError::Parse {
            file,
            line: 1,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.deserialize::<T>() {
        match record {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(PipelineError::Parse {
                    file,
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

/// Reads `spikes.csv` (`time_s,channel`) and `stims.csv`
/// (`time_s,pattern_id,freq_hz`) into a validated session.
pub fn parse_recording<S: Read, T: Read>(
    spike_csv: S,
    stim_csv: T,
    config: RecordingConfig,
    t_offset_min: f64,
) -> Result<RecordingSession> {
    let spikes: Vec<SpikeRow> = read_rows(spike_csv, "spikes.csv", &["time_s", "channel"])?;
    let stims: Vec<StimRow> =
        read_rows(stim_csv, "stims.csv", &["time_s", "pattern_id", "freq_hz"])?;
    RecordingSession::new(
        spikes
            .into_iter()
            .map(|r| SpikeEvent {
                time_s: r.time_s,
                channel: r.channel,
            })
            .collect(),
        stims
            .into_iter()
            .map(|r| StimEvent {
                time_s: r.time_s,
                pattern_id: r.pattern_id,
                freq_hz: r.freq_hz,
            })
            .collect(),
        config,
        t_offset_min,
    )
}

/// One evoked sample per stimulus, in stimulus time order.
///
/// Spikes count when `stim + window_start <= t < stim + window_end`.
pub fn evoked_samples(session: &RecordingSession) -> Vec<EvokedSample> {
    let cfg = &session.config;
    let n = cfg.n_channels;
    let denom = cfg.window_len() * n as f64;
    let spikes = &session.spike_events;
    let mut seen = vec![false; n];
    let mut touched = Vec::new();

    session
        .stim_events
        .iter()
        .map(|stim| {
            let lo = stim.time_s + cfg.window_start;
            let hi = stim.time_s + cfg.window_end;
            let first = spikes.partition_point(|s| s.time_s < lo);
            let mut total = 0usize;
            for s in spikes[first..].iter().take_while(|s| s.time_s < hi) {
                total += 1;
                if !seen[s.channel] {
                    seen[s.channel] = true;
                    touched.push(s.channel);
                }
            }
            let participation = touched.len() as f64 / n as f64;
            for c in touched.drain(..) {
                seen[c] = false;
            }
            EvokedSample {
                freq_hz: stim.freq_hz,
                x_f: total as f64 / denom,
                participation,
                is_burst: None,
            }
        })
        .collect()
}

/// Otsu threshold over raw values, scanning the midpoints between
/// consecutive distinct sorted values. Ties go to the smallest threshold.
pub fn otsu_threshold(values: &[f64]) -> Result<OtsuResult> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 || sorted[0] == sorted[n - 1] {
        return Err(PipelineError::Degenerate(n));
    }
    let total_mean = sorted.iter().sum::<f64>() / n as f64;

    // Cumulative zeroth/first moments: sigma_b^2 = (mu_T w - mu)^2 / (w (1 - w)).
    let mut best: Option<OtsuResult> = None;
    let mut cum_sum = 0.0;
    for i in 0..n - 1 {
        cum_sum += sorted[i];
        if sorted[i] == sorted[i + 1] {
            continue;
        }
        let w = (i + 1) as f64 / n as f64;
        let mu = cum_sum / n as f64;
        let num = total_mean * w - mu;
        let var = num * num / (w * (1.0 - w));
        let threshold = 0.5 * (sorted[i] + sorted[i + 1]);
        if best.is_none_or(|b| var > b.between_class_variance) {
            best = Some(OtsuResult {
                threshold,
                between_class_variance: var,
            });
        }
    }
    Ok(best.expect("at least two distinct values give one candidate"))
}

/// Splits samples into (non-burst, burst) using an Otsu threshold on the
/// channel-participation ratio. A sample is non-burst iff its participation
/// is strictly below the threshold.
pub fn classify_nonburst(
    samples: &[EvokedSample],
) -> Result<(Vec<EvokedSample>, Vec<EvokedSample>, OtsuResult)> {
    let ratios: Vec<f64> = samples.iter().map(|s| s.participation).collect();
    let otsu = otsu_threshold(&ratios)?;
    let (nonburst, burst): (Vec<_>, Vec<_>) = samples
        .iter()
        .map(|s| EvokedSample {
            is_burst: Some(s.participation >= otsu.threshold),
            ..*s
        })
        .partition(|s| s.is_burst == Some(false));
    Ok((nonburst, burst, otsu))
}

/// Linear-interpolation percentile at fractional index `p/100 * (n-1)`.
/// `sorted` must be in non-decreasing order.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(PipelineError::EmptyPercentile);
    }
    let p = p.clamp(0.0, 100.0);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        Ok(sorted[lo])
    } else {
        Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
    }
}

/// Builds the per-frequency normalized histograms and the pooled
/// P0..P100 table from non-burst samples.
pub fn build_snapshot(
    nonburst: &[EvokedSample],
    config: &RecordingConfig,
    t_offset_min: f64,
    otsu_threshold: f64,
) -> Result<NeuronSnapshot> {
    config.validate()?;
    let edges = config.bin_edges();
    let (lo, hi) = config.rate_range_hz;
    let width = (hi - lo) / config.n_bins as f64;
    let nf = config.frequencies_hz.len();

    let mut counts = vec![vec![0usize; config.n_bins]; nf];
    let mut n_samples = vec![0usize; nf];
    for s in nonburst {
        let Some(fi) = config.frequency_index(s.freq_hz) else {
            return Err(PipelineError::Validation(format!(
                "sample frequency {} Hz is not configured",
                s.freq_hz
            )));
        };
        let bin = if s.x_f <= lo {
            0
        } else {
            (((s.x_f - lo) / width) as usize).min(config.n_bins - 1)
        };
        counts[fi][bin] += 1;
        n_samples[fi] += 1;
    }
    if let Some(fi) = n_samples.iter().position(|&c| c == 0) {
        return Err(PipelineError::MissingFrequency(config.frequencies_hz[fi]));
    }
    let probs = counts
        .iter()
        .zip(&n_samples)
        .map(|(row, &total)| row.iter().map(|&c| c as f64 / total as f64).collect())
        .collect();

    let mut pooled: Vec<f64> = nonburst.iter().map(|s| s.x_f).collect();
    pooled.sort_by(f64::total_cmp);
    let percentiles = (0..=10)
        .map(|k| percentile(&pooled, 10.0 * k as f64))
        .collect::<Result<Vec<_>>>()?;

    Ok(NeuronSnapshot {
        frequencies_hz: config.frequencies_hz.clone(),
        bin_edges_hz: edges,
        probs,
        percentiles,
        n_samples,
        t_offset_min,
        otsu_threshold,
    })
}

/// Full pipeline for one session: evoked samples, burst separation and
/// snapshot. Returns the classified samples alongside the snapshot.
pub fn snapshot_from_session(
    session: &RecordingSession,
) -> Result<(NeuronSnapshot, Vec<EvokedSample>)> {
    let samples = evoked_samples(session);
    let (nonburst, _, otsu) = classify_nonburst(&samples)?;
    let snapshot = build_snapshot(&nonburst, &session.config, session.t_offset_min, otsu.threshold)?;
    let labelled = samples
        .into_iter()
        .map(|s| EvokedSample {
            is_burst: Some(s.participation >= otsu.threshold),
            ..s
        })
        .collect();
    Ok((snapshot, labelled))
}
