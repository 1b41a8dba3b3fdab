//! Histogram-based stochastic neuron simulator and the snapshot schedule
//! used for parameter shadowing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frequency index {index} out of range for {n} frequencies")]
    BadFrequencyIndex { index: usize, n: usize },
    #[error("unsupported snapshot schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("invalid snapshot: {0}")]
    Invalid(String),
    #[error("malformed snapshot document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty snapshot series")]
    EmptySeries,
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Per-frequency response distributions recorded at one point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSnapshot {
    pub frequencies_hz: Vec<f64>,
    pub bin_edges_hz: Vec<f64>,
    /// `probs[f][b]`: probability of bin `b` for frequency index `f`.
    pub probs: Vec<Vec<f64>>,
    /// P0, P10, ..., P100 of pooled non-burst rates.
    pub percentiles: Vec<f64>,
    pub n_samples: Vec<usize>,
    pub t_offset_min: f64,
    pub otsu_threshold: f64,
}

impl NeuronSnapshot {
    pub fn n_frequencies(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.frequencies_hz.len();
        if nf == 0 {
            return Err(SimError::Invalid("no frequencies".into()));
        }
        if self.bin_edges_hz.len() < 3 {
            return Err(SimError::Invalid("need at least two bins".into()));
        }
        if self.bin_edges_hz.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SimError::Invalid("bin edges are not strictly increasing".into()));
        }
        let n_bins = self.bin_edges_hz.len() - 1;
        if self.probs.len() != nf || self.n_samples.len() != nf {
            return Err(SimError::Invalid(format!(
                "expected {nf} probability rows and sample counts"
            )));
        }
        for (f, row) in self.frequencies_hz.iter().zip(&self.probs) {
            if row.len() != n_bins {
                return Err(SimError::Invalid(format!(
                    "{f} Hz row has {} bins, expected {n_bins}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(SimError::Invalid(format!("{f} Hz row has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SimError::Invalid(format!(
                    "{f} Hz probabilities sum to {sum}, not 1"
                )));
            }
        }
        if self.percentiles.len() != 11 {
            return Err(SimError::Invalid("percentile table must hold P0..P100".into()));
        }
        if self.percentiles.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(SimError::Invalid("percentiles are not non-decreasing".into()));
        }
        Ok(())
    }

    /// Draws one evoked firing rate for the given stimulus frequency. The
    /// bin is chosen categorically and the value is uniform inside it.
    pub fn sample_response<R: Rng + ?Sized>(&self, freq_index: usize, rng: &mut R) -> Result<f64> {
        let row = self.probs.get(freq_index).ok_or(SimError::BadFrequencyIndex {
            index: freq_index,
            n: self.probs.len(),
        })?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut bin = None;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if p > 0.0 {
                bin = Some(i);
                if u < acc {
                    break;
                }
            }
        }
        // Rounding can leave the cumulative sum just under u; `bin` then
        // holds the last non-empty bin.
        let bin = bin.ok_or_else(|| SimError::Invalid("empty probability row".into()))?;
        let lo = self.bin_edges_hz[bin];
        let hi = self.bin_edges_hz[bin + 1];
        let v: f64 = rng.random();
        let x = lo + (hi - lo) * v;
        Ok(if x < hi { x } else { hi.next_down() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SnapshotDoc::from(self)).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SimError::Invalid("missing version field".into()))?;
        if version != u64::from(SNAPSHOT_SCHEMA_VERSION) {
            return Err(SimError::SchemaVersion {
                found: version as u32,
                expected: SNAPSHOT_SCHEMA_VERSION,
            });
        }
        let doc: SnapshotDoc = serde_json::from_value(value)?;
        let snap = doc.into_snapshot()?;
        snap.validate()?;
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Free-function form of [`NeuronSnapshot::sample_response`].
pub fn sample_response<R: Rng + ?Sized>(
    snapshot: &NeuronSnapshot,
    freq_index: usize,
    rng: &mut R,
) -> Result<f64> {
    snapshot.sample_response(freq_index, rng)
}

fn freq_key(f: f64) -> String {
    if f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{}", f as i64)
    } else {
        format!("{f}")
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    version: u32,
    t_offset_min: f64,
    frequencies_hz: Vec<f64>,
    bin_edges_hz: Vec<f64>,
    probs: BTreeMap<String, Vec<f64>>,
    percentiles: Vec<f64>,
    n_samples: BTreeMap<String, usize>,
    otsu_threshold: f64,
}

impl From<&NeuronSnapshot> for SnapshotDoc {
    fn from(s: &NeuronSnapshot) -> Self {
        Self {
            version: SNAPSHOT_SCHEMA_VERSION,
            t_offset_min: s.t_offset_min,
            frequencies_hz: s.frequencies_hz.clone(),
            bin_edges_hz: s.bin_edges_hz.clone(),
            probs: s
                .frequencies_hz
                .iter()
                .zip(&s.probs)
                .map(|(&f, row)| (freq_key(f), row.clone()))
                .collect(),
            percentiles: s.percentiles.clone(),
            n_samples: s
                .frequencies_hz
                .iter()
                .zip(&s.n_samples)
                .map(|(&f, &n)| (freq_key(f), n))
                .collect(),
            otsu_threshold: s.otsu_threshold,
        }
    }
}

impl SnapshotDoc {
    fn into_snapshot(mut self) -> Result<NeuronSnapshot> {
        let mut probs = Vec::with_capacity(self.frequencies_hz.len());
        let mut n_samples = Vec::with_capacity(self.frequencies_hz.len());
        for &f in &self.frequencies_hz {
            let key = freq_key(f);
            probs.push(
                self.probs
                    .remove(&key)
                    .ok_or_else(|| SimError::Invalid(format!("no probabilities for {key} Hz")))?,
            );
            n_samples.push(
                self.n_samples
                    .remove(&key)
                    .ok_or_else(|| SimError::Invalid(format!("no sample count for {key} Hz")))?,
            );
        }
        if let Some(extra) = self.probs.keys().next() {
            return Err(SimError::Invalid(format!("unexpected frequency key {extra}")));
        }
        Ok(NeuronSnapshot {
            frequencies_hz: self.frequencies_hz,
            bin_edges_hz: self.bin_edges_hz,
            probs,
            percentiles: self.percentiles,
            n_samples,
            t_offset_min: self.t_offset_min,
            otsu_threshold: self.otsu_threshold,
        })
    }
}

/// Time-ordered snapshots and the step interval between switches.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    snapshots: Vec<NeuronSnapshot>,
    switch_interval_steps: u64,
}

impl SnapshotSeries {
    pub fn new(snapshots: Vec<NeuronSnapshot>, switch_interval_steps: u64) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(SimError::EmptySeries);
        }
        if switch_interval_steps == 0 {
            return Err(SimError::Invalid("switch interval must be >= 1".into()));
        }
        if snapshots
            .windows(2)
            .any(|w| !(w[0].t_offset_min < w[1].t_offset_min))
        {
            return Err(SimError::Invalid(
                "snapshot offsets must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            snapshots,
            switch_interval_steps,
        })
    }

    pub fn snapshots(&self) -> &[NeuronSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn switch_interval_steps(&self) -> u64 {
        self.switch_interval_steps
    }

    pub fn with_interval(&self, switch_interval_steps: u64) -> Result<Self> {
        Self::new(self.snapshots.clone(), switch_interval_steps)
    }

    pub fn active_snapshot(&self, global_step: u64) -> usize {
        active_snapshot(self.switch_interval_steps, self.snapshots.len(), global_step)
    }

    pub fn get(&self, index: usize) -> &NeuronSnapshot {
        &self.snapshots[index]
    }

    pub fn last(&self) -> &NeuronSnapshot {
        self.snapshots.last().expect("series is non-empty")
    }

    /// Loads every `*.json` snapshot in `dir`, ordered by file name.
    pub fn load_dir(dir: &Path, switch_interval_steps: u64) -> Result<Self> {
        let io = |source| SimError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let snapshots = paths
            .iter()
            .map(|p| NeuronSnapshot::load(p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(snapshots, switch_interval_steps)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for (i, s) in self.snapshots.iter().enumerate() {
            s.save(&dir.join(format!("snapshot_{i:03}.json")))?;
        }
        Ok(())
    }
}

/// Index of the snapshot in force at `global_step`:
/// `min(step / interval, len - 1)`.
pub fn active_snapshot(switch_interval_steps: u64, len: usize, global_step: u64) -> usize {
    let idx = global_step / switch_interval_steps.max(1);
    (idx.min(len.saturating_sub(1) as u64)) as usize
}
