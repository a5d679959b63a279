//! Browser bindings: a training curve per batch size, the decay of the
//! finite-sample bias term, and the truncation gap against its bound.
//!
//! Every export returns a JSON string; the page parses and plots it.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use jointpg::config::{EnvConfig, ExperimentConfig};
use jointpg::diagnostics::{measure_bias_terms, truncation_gap};
use jointpg::envs::{make_synthetic_two_state, make_wireless, WirelessConfig};
use jointpg::mdp::{DiscountSchedule, Environment};
use jointpg::trainer::train;
use jointpg::utility::UtilitySpec;

const MAX_WORK: f64 = 4e7;

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Objective per episode for each `N` in `ns`, one seed each.
pub fn training_curves(
    env: &str,
    ns: &[usize],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Value, String> {
    let work = ns.iter().sum::<usize>() as f64 * 2.0 * episodes as f64 * horizon as f64;
    if work > MAX_WORK {
        return Err(format!(
            "too much work for the page ({work:.1e} steps); lower N, K or H"
        ));
    }
    let mut cfg = ExperimentConfig::new(EnvConfig::from_name(env).map_err(|e| e.to_string())?);
    cfg.trainer.episodes = Some(episodes);
    cfg.trainer.horizon = Some(horizon);
    cfg.trainer.seed = Some(seed);
    let cfg = cfg.finish("").map_err(|e| e.to_string())?;
    let environment = cfg.env.build().map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    for &n in ns {
        let mut trainer = cfg.trainer_config().map_err(|e| e.to_string())?;
        trainer.n1 = n;
        trainer.n2 = n;
        let mut policy = cfg
            .initial_policy(environment.as_ref())
            .map_err(|e| e.to_string())?;
        let log = train(environment.as_ref(), &mut policy, &trainer).map_err(|e| e.to_string())?;
        let objective: Vec<f64> = log.records.iter().map(|r| r.objective).collect();
        curves.push(json!({ "n": n, "objective": objective }));
    }
    Ok(json!({ "env": env, "horizon": horizon, "curves": curves }))
}

/// Term I (mean per-trajectory norm) against `N₂` on the two-state model.
pub fn bias_decay(
    n2_values: &[usize],
    reps: usize,
    horizon: usize,
    seed: u64,
) -> Result<Value, String> {
    let env = make_synthetic_two_state();
    let spec = env.spec();
    let policy = jointpg::policy::PolicyParams::zeros(spec.num_states, spec.num_actions);
    let schedule = DiscountSchedule::new(0.9, horizon).map_err(|e| e.to_string())?;
    let utility = UtilitySpec::sum_log(1.0);
    let mut points = Vec::new();
    for &n2 in n2_values {
        let r = measure_bias_terms(&env, &policy, &schedule, &utility, n2, reps, seed)
            .map_err(|e| e.to_string())?;
        points.push(json!({
            "n2": n2,
            "term_i": r.term_i,
            "se_i": r.se_i,
            "bound_i": r.bounds.term_i,
            "signed_term_i": r.signed_term_i,
        }));
    }
    Ok(json!({ "horizon": horizon, "reps": reps, "points": points }))
}

/// `max_m |J_{m,H} − J_m|` and `r_max γ^H/(1−γ)` for `H = 1..=max_h`.
pub fn truncation(env: &str, gamma: f64, max_h: usize) -> Result<Value, String> {
    let horizons: Vec<usize> = (1..=max_h).collect();
    let model = match env {
        "synthetic" => make_synthetic_two_state().model().clone(),
        "wireless" => make_wireless(WirelessConfig::default())
            .map_err(|e| e.to_string())?
            .tabular_model()
            .cloned()
            .ok_or("wireless model too large")?,
        other => return Err(format!("{other} has no tabular model")),
    };
    let policy = jointpg::policy::PolicyParams::zeros(model.num_states(), model.num_actions());
    let gaps = truncation_gap(&model, &policy, gamma, &horizons).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = gaps
        .iter()
        .map(|g| json!({ "h": g.horizon, "gap": g.gap, "bound": g.bound }))
        .collect();
    Ok(json!({ "env": env, "gamma": gamma, "rows": rows }))
}

#[wasm_bindgen(js_name = trainingCurves)]
pub fn training_curves_js(
    env: &str,
    ns: Vec<u32>,
    episodes: u32,
    horizon: u32,
    seed: u32,
) -> Result<String, JsError> {
    let ns: Vec<usize> = ns.into_iter().map(|n| n as usize).collect();
    to_js(training_curves(
        env,
        &ns,
        episodes as usize,
        horizon as usize,
        seed as u64,
    ))
}

#[wasm_bindgen(js_name = biasDecay)]
pub fn bias_decay_js(
    n2_values: Vec<u32>,
    reps: u32,
    horizon: u32,
    seed: u32,
) -> Result<String, JsError> {
    let n2: Vec<usize> = n2_values.into_iter().map(|n| n as usize).collect();
    to_js(bias_decay(
        &n2,
        reps as usize,
        horizon as usize,
        seed as u64,
    ))
}

#[wasm_bindgen(js_name = truncationGaps)]
pub fn truncation_js(env: &str, gamma: f64, max_h: u32) -> Result<String, JsError> {
    to_js(truncation(env, gamma, max_h as usize))
}
