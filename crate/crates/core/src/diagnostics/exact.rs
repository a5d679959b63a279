//! Exact quantities over a [`TabularModel`]: state marginals, truncated and
//! long-horizon returns, and two independent routes to `∇θ f(J_H)`.

use crate::envs::TabularModel;
use crate::error::{arg_err, config_err, Result};
use crate::mdp::DiscountSchedule;
use crate::policy::PolicyParams;
use crate::utility::UtilitySpec;

/// Default tail tolerance of the long-horizon proxy.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Default central-difference step of [`exact_gradient`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactReturns {
    pub j_exact: Vec<f64>,
    pub horizon_used: usize,
}

fn check(model: &TabularModel, policy: &PolicyParams) -> Result<()> {
    if model.num_states() != policy.num_states() || model.num_actions() != policy.num_actions() {
        return Err(config_err("model and policy dimensions disagree"));
    }
    Ok(())
}

fn action_probs(model: &TabularModel, policy: &PolicyParams) -> Vec<Vec<f64>> {
    (0..model.num_states())
        .map(|s| policy.action_probabilities(s))
        .collect()
}

fn propagate(model: &TabularModel, pi: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let ns = model.num_states();
    let mut next = vec![0.0; ns];
    for s in 0..ns {
        if d[s] == 0.0 {
            continue;
        }
        for (a, &p) in pi[s].iter().enumerate() {
            let mass = d[s] * p;
            if mass == 0.0 {
                continue;
            }
            for (n, &q) in next.iter_mut().zip(model.transition_row(s, a)) {
                *n += mass * q;
            }
        }
    }
    next
}

/// `d_t(s)` for `t = 0..h`: `d₀ = ρ`, `d_{t+1}(s') = Σ_{s,a} d_t(s) π(a|s) P[s][a][s']`.
pub fn state_marginals(
    model: &TabularModel,
    policy: &PolicyParams,
    h: usize,
) -> Result<Vec<Vec<f64>>> {
    check(model, policy)?;
    let pi = action_probs(model, policy);
    let mut out = Vec::with_capacity(h);
    let mut d = model.initial().to_vec();
    for t in 0..h {
        if t > 0 {
            d = propagate(model, &pi, &d);
        }
        out.push(d.clone());
    }
    Ok(out)
}

fn returns_over(model: &TabularModel, policy: &PolicyParams, gamma: f64, h: usize) -> Vec<f64> {
    let pi = action_probs(model, policy);
    let nm = model.num_objectives();
    let mut j = vec![0.0; nm];
    let mut d = model.initial().to_vec();
    let mut discount = 1.0;
    for t in 0..h {
        if t > 0 {
            d = propagate(model, &pi, &d);
        }
        for s in 0..model.num_states() {
            for (a, &p) in pi[s].iter().enumerate() {
                let w = discount * d[s] * p;
                for (jm, r) in j.iter_mut().zip(model.reward(s, a)) {
                    *jm += w * r;
                }
            }
        }
        discount *= gamma;
    }
    j
}

/// `J_{m,H} = Σ_{t<H} γ^t Σ_{s,a} d_t(s) π(a|s) r̄[s][a][m]`.
pub fn exact_returns(
    model: &TabularModel,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
) -> Result<ExactReturns> {
    check(model, policy)?;
    Ok(ExactReturns {
        j_exact: returns_over(model, policy, schedule.gamma(), schedule.horizon()),
        horizon_used: schedule.horizon(),
    })
}

/// Smallest horizon whose discounted tail `r_max·γ^H/(1−γ)` is at most `tol`.
pub fn reference_horizon(gamma: f64, reward_max: f64, tol: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(arg_err("an infinite-horizon proxy needs gamma < 1"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(arg_err("tolerance must be > 0"));
    }
    if reward_max <= 0.0 {
        return Ok(1);
    }
    let h = ((tol * (1.0 - gamma) / reward_max).ln() / gamma.ln()).ceil();
    Ok((h.max(1.0)) as usize)
}

/// Infinite-horizon `J_m`, approximated at `H_ref` so the neglected tail is ≤ `tol`.
pub fn exact_returns_infinite(
    model: &TabularModel,
    policy: &PolicyParams,
    gamma: f64,
    tol: f64,
) -> Result<ExactReturns> {
    check(model, policy)?;
    let h = reference_horizon(gamma, model.reward_max(), tol)?;
    Ok(ExactReturns {
        j_exact: returns_over(model, policy, gamma, h),
        horizon_used: h,
    })
}

/// Central finite differences of `θ ↦ f(J_H(θ))` with step [`FD_STEP`].
pub fn exact_gradient(
    model: &TabularModel,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
) -> Result<Vec<f64>> {
    exact_gradient_with_step(model, policy, schedule, utility, FD_STEP)
}

pub fn exact_gradient_with_step(
    model: &TabularModel,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    step: f64,
) -> Result<Vec<f64>> {
    check(model, policy)?;
    let objective = |p: &PolicyParams| -> Result<f64> {
        utility.value(&returns_over(
            model,
            p,
            schedule.gamma(),
            schedule.horizon(),
        ))
    };
    let mut probe = policy.clone();
    let mut grad = Vec::with_capacity(policy.dim());
    for i in 0..policy.dim() {
        let base = probe.as_slice()[i];
        probe.as_mut_slice()[i] = base + step;
        let up = objective(&probe)?;
        probe.as_mut_slice()[i] = base - step;
        let down = objective(&probe)?;
        probe.as_mut_slice()[i] = base;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// `∇θ f(J_H)` by the chain rule and a backward DP over `Q_t(s,a)`.
///
/// `Q_t^m(s,a) = γ^t r̄_m(s,a) + Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Q_{t+1}^m(s',a')`
/// and `∇J_{m,H} = Σ_t Σ_s d_t(s) Σ_a π(a|s) ∇log π(a|s) Q_t^m(s,a)`.
/// Shares no code with the sampling estimator or the finite-difference route.
pub fn analytic_gradient(
    model: &TabularModel,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
) -> Result<Vec<f64>> {
    check(model, policy)?;
    let (ns, na) = (model.num_states(), model.num_actions());
    let h = schedule.horizon();
    let gamma = schedule.gamma();
    let j = returns_over(model, policy, gamma, h);
    let partials = utility.partials(&j)?;
    let pi = action_probs(model, policy);
    let marginals = state_marginals(model, policy, h)?;

    // scalarized Q_t(s,a) = Σ_m ∂f/∂J_m · Q_t^m(s,a)
    let reward: Vec<f64> = (0..ns * na)
        .map(|i| {
            model
                .reward(i / na, i % na)
                .iter()
                .zip(&partials)
                .map(|(r, p)| r * p)
                .sum()
        })
        .collect();
    let mut grad = vec![0.0; ns * na];
    let mut value_next = vec![0.0; ns];
    for t in (0..h).rev() {
        let discount = gamma.powi(t as i32);
        let mut q = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let cont: f64 = model
                    .transition_row(s, a)
                    .iter()
                    .zip(&value_next)
                    .map(|(p, v)| p * v)
                    .sum();
                q[s * na + a] = discount * reward[s * na + a] + cont;
            }
        }
        for s in 0..ns {
            let qs = &q[s * na..(s + 1) * na];
            let mean: f64 = pi[s].iter().zip(qs).map(|(p, v)| p * v).sum();
            for a in 0..na {
                grad[s * na + a] += marginals[t][s] * pi[s][a] * (qs[a] - mean);
            }
            value_next[s] = mean;
        }
    }
    Ok(grad)
}
