//! Return estimates and the truncated policy-gradient estimator.
//!
//! For one gradient trajectory `τ_i` and partials frozen at the return
//! estimate `Ĵ` of an independent batch,
//!
//! ```text
//! g(τ_i) = Σ_{t<H} ∇θ log π(a_t|s_t) · Σ_m ∂f/∂J_m(Ĵ) · Σ_{h=t}^{H−1} γ^h r_m(s_h, a_h)
//! ```
//!
//! The tail sum keeps the absolute discount `γ^h`. The full-return variant
//! replaces every tail with the whole-episode sum; both have the same
//! expectation because past rewards are uncorrelated with later scores.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, Result};
use crate::mdp::{check_dims, episode_return, tail_returns, DiscountSchedule, Rollout, Trajectory};
use crate::policy::{ActionTable, PolicyParams};
use crate::stream::StreamId;
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorVariant {
    /// Step `t` is weighted by rewards from `t` onward.
    #[default]
    RewardToGo,
    /// Every step is weighted by the whole-episode return.
    FullReturn,
}

/// `Ĵ_{m,H}`: mean truncated discounted return over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnEstimate {
    pub j_hat: Vec<f64>,
    pub n2: usize,
    pub horizon: usize,
    pub gamma: f64,
}

/// Mean of per-trajectory gradients: the ascent direction `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub omega: Vec<f64>,
    pub n1: usize,
    pub variant: EstimatorVariant,
    /// The utility's clamp floor was hit when evaluating partials at `Ĵ`.
    pub clamped: bool,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        norm(&self.omega)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn estimate_returns(
    trajs: &[Trajectory],
    schedule: &DiscountSchedule,
) -> Result<ReturnEstimate> {
    let first = trajs
        .first()
        .ok_or_else(|| arg_err("return estimate needs at least one trajectory"))?;
    let m = first.num_objectives();
    let mut sum = vec![0.0; m];
    for traj in trajs {
        if traj.len() != first.len() || traj.num_objectives() != m {
            return Err(arg_err(
                "trajectories in a batch must share horizon and objective count",
            ));
        }
        for (s, r) in sum.iter_mut().zip(episode_return(traj, schedule)) {
            *s += r;
        }
    }
    let n = trajs.len() as f64;
    Ok(ReturnEstimate {
        j_hat: sum.into_iter().map(|s| s / n).collect(),
        n2: trajs.len(),
        horizon: first.len(),
        gamma: schedule.gamma(),
    })
}

/// Samples one return per stream and averages, without materializing trajectories.
///
/// Summation follows stream order, so the result does not depend on threading.
pub fn sample_return_estimate(
    rollout: &Rollout<'_>,
    schedule: &DiscountSchedule,
    streams: &[StreamId],
) -> Result<ReturnEstimate> {
    if streams.is_empty() {
        return Err(arg_err("return estimate needs at least one trajectory"));
    }
    let m = rollout.env().spec().num_objectives;
    let one = |id: &StreamId| {
        let mut acc = vec![0.0; m];
        rollout.accumulate_return(schedule, &mut id.rng(), &mut acc);
        acc
    };
    let returns: Vec<Vec<f64>> = crate::par::map(streams, one);
    let mut sum = vec![0.0; m];
    for r in &returns {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
    }
    let n = streams.len() as f64;
    Ok(ReturnEstimate {
        j_hat: sum.into_iter().map(|s| s / n).collect(),
        n2: streams.len(),
        horizon: schedule.horizon(),
        gamma: schedule.gamma(),
    })
}

/// Per-trajectory gradient `g(τ)` with the given frozen partials.
pub fn single_gradient(
    traj: &Trajectory,
    partials: &[f64],
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    variant: EstimatorVariant,
) -> Result<Vec<f64>> {
    check_gradient_inputs(traj, partials, policy, schedule)?;
    let mut out = vec![0.0; policy.dim()];
    accumulate_single(
        traj,
        partials,
        &policy.table(),
        schedule.gamma(),
        variant,
        &mut out,
    );
    Ok(out)
}

fn check_gradient_inputs(
    traj: &Trajectory,
    partials: &[f64],
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
) -> Result<()> {
    if partials.len() != traj.num_objectives() {
        return Err(config_err(format!(
            "{} partials for {} objectives",
            partials.len(),
            traj.num_objectives()
        )));
    }
    if traj.len() != schedule.horizon() {
        return Err(config_err(format!(
            "trajectory has {} steps, schedule horizon is {}",
            traj.len(),
            schedule.horizon()
        )));
    }
    if let Some(&s) = traj.states().iter().find(|&&s| s >= policy.num_states()) {
        return Err(config_err(format!("state {s} outside the policy table")));
    }
    Ok(())
}

/// Adds `g(τ)` into `out` (length `|S|·|A|`), touching only visited rows.
pub(crate) fn accumulate_single(
    traj: &Trajectory,
    partials: &[f64],
    table: &ActionTable,
    gamma: f64,
    variant: EstimatorVariant,
    out: &mut [f64],
) {
    let m = traj.num_objectives();
    let tails = tail_returns(traj, gamma);
    let weight = |t: usize| -> f64 {
        let row = match variant {
            EstimatorVariant::RewardToGo => &tails[t * m..(t + 1) * m],
            EstimatorVariant::FullReturn => &tails[..m],
        };
        row.iter().zip(partials).map(|(r, p)| r * p).sum()
    };
    for t in 0..traj.len() {
        let w = weight(t);
        if w == 0.0 {
            continue;
        }
        let s = traj.state(t);
        let probs = table.probabilities(s);
        let base = s * probs.len();
        for (k, p) in probs.iter().enumerate() {
            out[base + k] -= w * p;
        }
        out[base + traj.action(t)] += w;
    }
}

/// `ω = (1/N₁) Σ_i g(τ_i)` with partials evaluated once at `returns.j_hat`.
pub fn batch_gradient(
    trajs_i: &[Trajectory],
    returns: &ReturnEstimate,
    utility: &UtilitySpec,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    variant: EstimatorVariant,
) -> Result<GradientEstimate> {
    if trajs_i.is_empty() {
        return Err(arg_err("gradient estimate needs at least one trajectory"));
    }
    let partials = utility.partials(&returns.j_hat)?;
    for traj in trajs_i {
        check_gradient_inputs(traj, &partials, policy, schedule)?;
    }
    let table = policy.table();
    let per_traj: Vec<Vec<f64>> = crate::par::map(trajs_i, |traj| {
        let mut g = vec![0.0; policy.dim()];
        accumulate_single(traj, &partials, &table, schedule.gamma(), variant, &mut g);
        g
    });
    Ok(GradientEstimate {
        omega: mean_of(&per_traj, policy.dim()),
        n1: trajs_i.len(),
        variant,
        clamped: utility.clamps(&returns.j_hat),
    })
}

/// Element-wise mean, summed in index order.
pub(crate) fn mean_of(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let n = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Samples the gradient batch from `streams` and forms `ω` in one pass.
pub fn sample_batch_gradient(
    rollout: &Rollout<'_>,
    policy: &PolicyParams,
    returns: &ReturnEstimate,
    utility: &UtilitySpec,
    schedule: &DiscountSchedule,
    variant: EstimatorVariant,
    streams: &[StreamId],
) -> Result<GradientEstimate> {
    if streams.is_empty() {
        return Err(arg_err("gradient estimate needs at least one trajectory"));
    }
    check_dims(rollout.env().spec(), policy)?;
    let partials = utility.partials(&returns.j_hat)?;
    if partials.len() != rollout.env().spec().num_objectives {
        return Err(config_err(
            "partials do not match the environment's objectives",
        ));
    }
    let table = policy.table();
    let per_traj: Vec<Vec<f64>> = crate::par::map(streams, |id| {
        let traj = rollout.sample(schedule.horizon(), &mut id.rng());
        let mut g = vec![0.0; policy.dim()];
        accumulate_single(&traj, &partials, &table, schedule.gamma(), variant, &mut g);
        g
    });
    Ok(GradientEstimate {
        omega: mean_of(&per_traj, policy.dim()),
        n1: streams.len(),
        variant,
        clamped: utility.clamps(&returns.j_hat),
    })
}
