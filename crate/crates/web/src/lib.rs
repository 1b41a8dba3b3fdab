//! Browser bindings: build a neuron snapshot at a given recording time,
//! map rates through a percentile table, and roll out a goal-seeking walk
//! whose turns go through the simulated neurons.

use animat_core::envs::{goal_distance, nav_step, Condition, NavParams, NavState};
use animat_core::neuron_sim::NeuronSnapshot;
use animat_core::seeded_rng;
use animat_core::spike_pipeline::snapshot_from_session;
use animat_core::synth_mea::{gen_session, GenParams};
use wasm_bindgen::prelude::*;

fn snapshot_at(t_min: f64, fatigue_rate: f64, seed: u64) -> Result<NeuronSnapshot, String> {
    let params = GenParams {
        fatigue_rate,
        seed,
        ..GenParams::default()
    };
    let session = gen_session(&params, t_min, &mut seeded_rng(seed)).map_err(|e| e.to_string())?;
    Ok(snapshot_from_session(&session.session).map_err(|e| e.to_string())?.0)
}

/// Snapshot JSON for a synthetic recording made `t_min` minutes in.
#[wasm_bindgen]
pub fn build_snapshot(t_min: f64, fatigue_rate: f64, seed: u64) -> Result<String, String> {
    Ok(snapshot_at(t_min, fatigue_rate, seed)?.to_json())
}

/// Command for `rate` under the binary (`nine = false`) or decile mapping.
#[wasm_bindgen]
pub fn map_rate(rate: f64, percentiles: Vec<f64>, nine: bool) -> Result<f64, String> {
    if percentiles.len() != 11 {
        return Err(format!("expected 11 percentiles, got {}", percentiles.len()));
    }
    let cond = if nine { Condition::Map9thr } else { Condition::Map1thr };
    Ok(cond.map_rate(rate, &percentiles))
}

/// Walk toward the goal with neurons recorded at `t_min`, mapped through
/// the table of a snapshot recorded at `table_t_min`. The walker asks for
/// the strongest or weakest stimulus depending on which way it must turn.
/// Returns flat `[x0, y0, x1, y1, ...]`.
#[wasm_bindgen]
pub fn nav_rollout(
    t_min: f64,
    table_t_min: f64,
    fatigue_rate: f64,
    seed: u64,
    steps: u32,
) -> Result<Vec<f64>, String> {
    let neurons = snapshot_at(t_min, fatigue_rate, seed)?;
    let table = if table_t_min == t_min {
        neurons.percentiles.clone()
    } else {
        snapshot_at(table_t_min, fatigue_rate, seed.wrapping_add(1))?.percentiles
    };
    let params = NavParams::default();
    let mut rng = seeded_rng(seed ^ 0xA11CE);
    let mut state = NavState::default();
    let mut path = vec![state.x, state.y];
    let top = neurons.n_frequencies() - 1;
    for _ in 0..steps {
        let bearing = (params.goal.1 - state.y).atan2(params.goal.0 - state.x);
        let err = animat_core::envs::wrap_angle(bearing - state.theta);
        let freq = if err >= 0.0 { top } else { 0 };
        let rate = neurons.sample_response(freq, &mut rng).map_err(|e| e.to_string())?;
        let u = Condition::Map1thr.map_rate(rate, &table);
        let (next, _, reached) = nav_step(&state, u * params.dtheta_max, &params).map_err(|e| e.to_string())?;
        state = next;
        path.extend([state.x, state.y]);
        if reached || goal_distance(&state, &params) <= params.goal_radius {
            break;
        }
    }
    Ok(path)
}
