//! Exact oracles and Monte Carlo measurements of the estimator's bias,
//! variance and truncation error.
//!
//! The bias of the truncated estimator splits into three pieces:
//!
//! * term I: partials at the sampled `Ĵ_H` instead of the exact `J_H`;
//! * term II: partials at `J_H` instead of the infinite-horizon `J`;
//! * term III: the gradient trajectory cut at `H` instead of running forever.
//!
//! Each term is measured as the mean over repetitions of the per-trajectory
//! norm, which is the quantity the analytic bounds control. Infinite horizons
//! are replaced by `H_ref` with a discounted tail below [`REFERENCE_TOL`].

mod exact;

pub use exact::{
    analytic_gradient, exact_gradient, exact_gradient_with_step, exact_returns,
    exact_returns_infinite, reference_horizon, state_marginals, ExactReturns, FD_STEP,
    REFERENCE_TOL,
};

use serde::Serialize;

use crate::envs::TabularModel;
use crate::error::{arg_err, Error, Result};
use crate::estimator::{
    accumulate_single, mean_of, norm, sample_return_estimate, EstimatorVariant,
};
use crate::mdp::{geometric_sum, DiscountSchedule, Environment, Rollout};
use crate::policy::PolicyParams;
use crate::stream::{Batch, StreamId};
use crate::trainer::SOFTMAX_SCORE_BOUND;
use crate::utility::UtilitySpec;

/// Failure probability used when turning the Hoeffding step of the term I bound into a number.
pub const BOUND_CONFIDENCE: f64 = 0.05;

const CHUNK: usize = 2048;

fn require_model(env: &dyn Environment) -> Result<&TabularModel> {
    env.tabular_model()
        .ok_or_else(|| Error::Unsupported(format!("{} has no tabular model", env.name())))
}

/// Mean and standard error from running sums.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn std_err(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let mean = self.mean();
        let var = ((self.sum_sq - self.n * mean * mean) / (self.n - 1.0)).max(0.0);
        (var / self.n).sqrt()
    }
}

/// Closed-form bounds on the three bias terms for one setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasBounds {
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    /// Lower edge `δ` of the box on which `L_f` and `C` are evaluated.
    pub domain_floor: f64,
    pub lipschitz: f64,
    pub partial_bound: f64,
    /// `ε'` from the Hoeffding step at [`BOUND_CONFIDENCE`].
    pub epsilon: f64,
}

/// Evaluates the three bounds with `G = √2`, rewards scaled by `r_max`.
///
/// ```text
/// K_H   = (1 − γ^H − Hγ^H(1−γ)) / (1−γ)²
/// ε'    = r_max (1−γ^H)/(1−γ) · sqrt(M log(2MH/p) / (2 N₂))
/// I   ≤ M G L_f r_max K_H ε'
/// II  ≤ M^{3/2} G L_f r_max K_H · r_max γ^H/(1−γ)
/// III ≤ M G C r_max γ^H (1 + H(1−γ)) / (1−γ)²
/// ```
pub fn bias_bounds(
    model: &TabularModel,
    reward_max: f64,
    utility: &UtilitySpec,
    schedule: &DiscountSchedule,
    n2: usize,
) -> BiasBounds {
    let gamma = schedule.gamma();
    let h = schedule.horizon();
    let m = model.num_objectives() as f64;
    let g = SOFTMAX_SCORE_BOUND;
    let gh = gamma.powi(h as i32);
    let floor = model
        .reward_floor()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let domain_floor = (floor * geometric_sum(gamma, h)).max(utility.clamp_floor);
    let lf = utility.partials_lipschitz(domain_floor);
    let c = utility.partial_bound(domain_floor);
    let k_h = (1.0 - gh - h as f64 * gh * (1.0 - gamma)) / (1.0 - gamma).powi(2);
    let epsilon = reward_max * (1.0 - gh) / (1.0 - gamma)
        * (m * (2.0 * m * h as f64 / BOUND_CONFIDENCE).ln() / (2.0 * n2 as f64)).sqrt();
    BiasBounds {
        term_i: m * g * lf * reward_max * k_h * epsilon,
        term_ii: m.powf(1.5) * g * lf * reward_max * k_h * reward_max * gh / (1.0 - gamma),
        term_iii: m * g * c * reward_max * gh * (1.0 + h as f64 * (1.0 - gamma))
            / (1.0 - gamma).powi(2),
        domain_floor,
        lipschitz: lf,
        partial_bound: c,
        epsilon,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub n2: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub reps: usize,
    pub reference_horizon: usize,
    /// Tail tolerance of the `H_ref` proxy.
    pub reference_tol: f64,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    pub se_i: f64,
    pub se_ii: f64,
    pub se_iii: f64,
    /// `‖E[g(τ^H, Ĵ)] − ∇θ f(J)‖`, estimated against the long-horizon reference estimator.
    pub total_bias: f64,
    /// `‖E[g(τ^H, Ĵ) − g̃(τ^H, J_H)]‖`: the signed part of term I.
    pub signed_term_i: f64,
    pub bounds: BiasBounds,
}

impl BiasReport {
    /// Every term lies below its bound plus `slack_se` standard errors.
    pub fn within_bounds(&self, slack_se: f64) -> bool {
        self.term_i <= self.bounds.term_i + slack_se * self.se_i
            && self.term_ii <= self.bounds.term_ii + slack_se * self.se_ii
            && self.term_iii <= self.bounds.term_iii + slack_se * self.se_iii
    }
}

struct RepSample {
    norms: [f64; 3],
    diff_i: Vec<f64>,
    diff_total: Vec<f64>,
}

/// Measures bias terms I/II/III over `reps` independent repetitions.
///
/// Repetition `r` draws `N₂` return trajectories and one gradient trajectory of
/// length `H_ref`, whose first `H` steps serve as `τ^H`.
pub fn measure_bias_terms(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    n2: usize,
    reps: usize,
    seed: u64,
) -> Result<BiasReport> {
    let model = require_model(env)?;
    let gamma = schedule.gamma();
    if gamma >= 1.0 {
        return Err(arg_err("bias decomposition needs gamma < 1"));
    }
    if n2 == 0 || reps == 0 {
        return Err(arg_err("n2 and reps must be >= 1"));
    }
    let h = schedule.horizon();
    let reward_max = env.spec().reward_max;
    let h_ref = reference_horizon(gamma, model.reward_max(), REFERENCE_TOL)?.max(h);
    let j_h = exact_returns(model, policy, schedule)?.j_exact;
    let long = schedule.with_horizon(h_ref)?;
    let j_inf = exact_returns(model, policy, &long)?.j_exact;
    let p_h = utility.partials(&j_h)?;
    let p_inf = utility.partials(&j_inf)?;

    let rollout = Rollout::new(env, policy)?;
    let table = policy.table();
    let dim = policy.dim();
    let variant = EstimatorVariant::RewardToGo;

    let one_rep = |rep: &u64| -> Result<RepSample> {
        let returns_ids: Vec<StreamId> = (0..n2 as u64)
            .map(|j| StreamId::new(seed, *rep, Batch::Auxiliary(1), j))
            .collect();
        let j_hat = sample_return_serial(&rollout, schedule, &returns_ids);
        let p_hat = utility.partials(&j_hat)?;
        let traj_long = rollout.sample(
            h_ref,
            &mut StreamId::new(seed, *rep, Batch::Auxiliary(2), 0).rng(),
        );
        let traj_h = traj_long.prefix(h);
        let grad = |traj, partials: &[f64]| {
            let mut out = vec![0.0; dim];
            accumulate_single(traj, partials, &table, gamma, variant, &mut out);
            out
        };
        let g = grad(&traj_h, &p_hat);
        let g_hh = grad(&traj_h, &p_h);
        let g_hinf = grad(&traj_h, &p_inf);
        let g_inf = if h_ref == h {
            g_hinf.clone()
        } else {
            grad(&traj_long, &p_inf)
        };
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        let diff_i = sub(&g, &g_hh);
        Ok(RepSample {
            norms: [
                norm(&diff_i),
                norm(&sub(&g_hh, &g_hinf)),
                norm(&sub(&g_hinf, &g_inf)),
            ],
            diff_i,
            diff_total: sub(&g, &g_inf),
        })
    };

    let mut moments = [Moments::default(); 3];
    let mut sum_i = vec![0.0; dim];
    let mut sum_total = vec![0.0; dim];
    let ids: Vec<u64> = (0..reps as u64).collect();
    for chunk in ids.chunks(CHUNK) {
        for sample in crate::par::map(chunk, one_rep) {
            let sample = sample?;
            for (m, x) in moments.iter_mut().zip(sample.norms) {
                m.push(x);
            }
            for (s, d) in sum_i.iter_mut().zip(&sample.diff_i) {
                *s += d;
            }
            for (s, d) in sum_total.iter_mut().zip(&sample.diff_total) {
                *s += d;
            }
        }
    }
    let n = reps as f64;
    let mean_norm = |v: &[f64]| v.iter().map(|x| (x / n).powi(2)).sum::<f64>().sqrt();
    Ok(BiasReport {
        n2,
        horizon: h,
        gamma,
        reps,
        reference_horizon: h_ref,
        reference_tol: REFERENCE_TOL,
        term_i: moments[0].mean(),
        term_ii: moments[1].mean(),
        term_iii: moments[2].mean(),
        se_i: moments[0].std_err(),
        se_ii: moments[1].std_err(),
        se_iii: moments[2].std_err(),
        total_bias: mean_norm(&sum_total),
        signed_term_i: mean_norm(&sum_i),
        bounds: bias_bounds(model, reward_max, utility, schedule, n2),
    })
}

fn sample_return_serial(
    rollout: &Rollout<'_>,
    schedule: &DiscountSchedule,
    ids: &[StreamId],
) -> Vec<f64> {
    let m = rollout.env().spec().num_objectives;
    let mut acc = vec![0.0; m];
    for id in ids {
        rollout.accumulate_return(schedule, &mut id.rng(), &mut acc);
    }
    let n = ids.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    acc
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    /// `σ̂² = (1/(n−1)) Σ ‖g_i − ḡ‖²`
    pub sigma2: f64,
    pub samples: usize,
    pub variant: EstimatorVariant,
}

/// Trace variance of the per-trajectory gradient with partials frozen at a
/// separate `N₂`-trajectory estimate.
pub fn estimate_variance(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    n2: usize,
    samples: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if samples < 2 {
        return Err(arg_err("variance needs at least 2 samples"));
    }
    if n2 == 0 {
        return Err(arg_err("n2 must be >= 1"));
    }
    let rollout = Rollout::new(env, policy)?;
    let ids: Vec<StreamId> = (0..n2 as u64)
        .map(|j| StreamId::new(seed, 0, Batch::Auxiliary(3), j))
        .collect();
    let j_hat = sample_return_estimate(&rollout, schedule, &ids)?.j_hat;
    let partials = utility.partials(&j_hat)?;
    gradient_variance(
        env,
        policy,
        schedule,
        &partials,
        samples,
        seed,
        EstimatorVariant::RewardToGo,
    )
}

/// Variance over two disjoint batches of `samples` trajectories each, with one
/// shared `Ĵ`. Returns the pooled report and the two halves.
pub fn split_half_variance(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    n2: usize,
    samples: usize,
    seed: u64,
) -> Result<[VarianceReport; 3]> {
    if n2 == 0 {
        return Err(arg_err("n2 must be >= 1"));
    }
    let rollout = Rollout::new(env, policy)?;
    let ids: Vec<StreamId> = (0..n2 as u64)
        .map(|j| StreamId::new(seed, 0, Batch::Auxiliary(3), j))
        .collect();
    let partials = utility.partials(&sample_return_estimate(&rollout, schedule, &ids)?.j_hat)?;
    let variant = EstimatorVariant::RewardToGo;
    let a = variance_over(
        env,
        policy,
        schedule,
        &partials,
        0..samples as u64,
        seed,
        variant,
    )?;
    let b = variance_over(
        env,
        policy,
        schedule,
        &partials,
        samples as u64..2 * samples as u64,
        seed,
        variant,
    )?;
    let pooled = variance_over(
        env,
        policy,
        schedule,
        &partials,
        0..2 * samples as u64,
        seed,
        variant,
    )?;
    Ok([pooled, a, b])
}

/// Trace variance of `g(τ)` for fixed partials.
pub fn gradient_variance(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    partials: &[f64],
    samples: usize,
    seed: u64,
    variant: EstimatorVariant,
) -> Result<VarianceReport> {
    variance_over(
        env,
        policy,
        schedule,
        partials,
        0..samples as u64,
        seed,
        variant,
    )
}

fn variance_over(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    partials: &[f64],
    indices: std::ops::Range<u64>,
    seed: u64,
    variant: EstimatorVariant,
) -> Result<VarianceReport> {
    let samples = (indices.end - indices.start) as usize;
    if samples < 2 {
        return Err(arg_err("variance needs at least 2 samples"));
    }
    if partials.len() != env.spec().num_objectives {
        return Err(crate::error::config_err(
            "partials do not match the environment's objectives",
        ));
    }
    let rollout = Rollout::new(env, policy)?;
    let table = policy.table();
    let dim = policy.dim();
    // per-coordinate Welford, merged in stream order
    let mut count = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let ids: Vec<u64> = indices.collect();
    for chunk in ids.chunks(CHUNK) {
        let grads = crate::par::map(chunk, |i| {
            let traj = rollout.sample(
                schedule.horizon(),
                &mut StreamId::new(seed, 0, Batch::Auxiliary(4), *i).rng(),
            );
            let mut g = vec![0.0; dim];
            accumulate_single(&traj, partials, &table, schedule.gamma(), variant, &mut g);
            g
        });
        for g in grads {
            count += 1.0;
            for k in 0..dim {
                let delta = g[k] - mean[k];
                mean[k] += delta / count;
                m2[k] += delta * (g[k] - mean[k]);
            }
        }
    }
    Ok(VarianceReport {
        sigma2: m2.iter().sum::<f64>() / (count - 1.0),
        samples,
        variant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationGap {
    pub horizon: usize,
    /// `max_m |J_{m,H} − J_{m,H_ref}|`
    pub gap: f64,
    /// `r_max γ^H / (1−γ)`
    pub bound: f64,
    pub holds: bool,
}

pub fn truncation_gap(
    model: &TabularModel,
    policy: &PolicyParams,
    gamma: f64,
    horizons: &[usize],
) -> Result<Vec<TruncationGap>> {
    let reward_max = model.reward_max();
    let reference = exact_returns_infinite(model, policy, gamma, REFERENCE_TOL)?;
    horizons
        .iter()
        .map(|&h| {
            let schedule = DiscountSchedule::new(gamma, h)?;
            let j_h = exact_returns(model, policy, &schedule)?.j_exact;
            let gap = j_h
                .iter()
                .zip(&reference.j_exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let bound = reward_max * gamma.powi(h as i32) / (1.0 - gamma);
            Ok(TruncationGap {
                horizon: h,
                gap,
                bound,
                holds: gap <= bound,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JensenGap {
    /// Monte Carlo `E[∂f/∂J_m(Ĵ)]`.
    pub mean_partials: Vec<f64>,
    pub std_err: Vec<f64>,
    /// `∂f/∂J_m(J_H)`, the partials at `E[Ĵ]`.
    pub partials_at_mean: Vec<f64>,
    pub reps: usize,
}

impl JensenGap {
    /// Gap in standard errors for each objective (positive when the mean partial is larger).
    pub fn z_scores(&self) -> Vec<f64> {
        self.mean_partials
            .iter()
            .zip(&self.partials_at_mean)
            .zip(&self.std_err)
            .map(|((m, p), se)| (m - p) / se)
            .collect()
    }
}

/// Evidence that partials at a sampled `Ĵ` are biased: compares their mean
/// over `reps` independent `N₂`-batches with the partials at the exact `J_H`.
pub fn partials_jensen_gap(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    n2: usize,
    reps: usize,
    seed: u64,
) -> Result<JensenGap> {
    let model = require_model(env)?;
    if reps < 2 || n2 == 0 {
        return Err(arg_err("need n2 >= 1 and reps >= 2"));
    }
    let rollout = Rollout::new(env, policy)?;
    let at_mean = utility.partials(&exact_returns(model, policy, schedule)?.j_exact)?;
    let mut moments = vec![Moments::default(); at_mean.len()];
    for rep in 0..reps as u64 {
        let ids: Vec<StreamId> = (0..n2 as u64)
            .map(|j| StreamId::new(seed, rep, Batch::Auxiliary(5), j))
            .collect();
        let p = utility.partials(&sample_return_serial(&rollout, schedule, &ids))?;
        for (m, x) in moments.iter_mut().zip(p) {
            m.push(x);
        }
    }
    Ok(JensenGap {
        mean_partials: moments.iter().map(Moments::mean).collect(),
        std_err: moments.iter().map(Moments::std_err).collect(),
        partials_at_mean: at_mean,
        reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorCheck {
    pub n1: usize,
    pub n2: usize,
    pub reps: usize,
    pub relative_error: f64,
    pub exact_norm: f64,
    pub mean_estimate: Vec<f64>,
    pub exact: Vec<f64>,
}

/// Mean of `reps` independent batch gradients (`N₁ = N₂ = n`) against the
/// finite-difference [`exact_gradient`].
pub fn compare_estimator(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    utility: &UtilitySpec,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EstimatorCheck> {
    let model = require_model(env)?;
    if n == 0 || reps == 0 {
        return Err(arg_err("n and reps must be >= 1"));
    }
    let exact = exact_gradient(model, policy, schedule, utility)?;
    let rollout = Rollout::new(env, policy)?;
    let mut estimates = Vec::with_capacity(reps);
    for rep in 0..reps as u64 {
        let ids = |batch| {
            (0..n as u64)
                .map(|i| StreamId::new(seed, rep, batch, i))
                .collect::<Vec<_>>()
        };
        let returns = sample_return_estimate(&rollout, schedule, &ids(Batch::Returns))?;
        let grad = crate::estimator::sample_batch_gradient(
            &rollout,
            policy,
            &returns,
            utility,
            schedule,
            EstimatorVariant::RewardToGo,
            &ids(Batch::Gradient),
        )?;
        estimates.push(grad.omega);
    }
    let mean = mean_of(&estimates, policy.dim());
    let diff: Vec<f64> = mean.iter().zip(&exact).map(|(a, b)| a - b).collect();
    let exact_norm = norm(&exact);
    Ok(EstimatorCheck {
        n1: n,
        n2: n,
        reps,
        relative_error: norm(&diff) / exact_norm,
        exact_norm,
        mean_estimate: mean,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_bandit, make_synthetic_two_state, TabularEnv};

    fn cycle_model() -> TabularModel {
        // 3-state deterministic cycle 0 → 1 → 2 → 0 under either action
        let mut p = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            for a in 0..2 {
                p[(s * 2 + a) * 3 + (s + 1) % 3] = 1.0;
            }
        }
        TabularModel::new(3, 2, 1, p, vec![1.0; 6], vec![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn marginals_start_at_rho() {
        let env = make_synthetic_two_state();
        let d = state_marginals(env.model(), &PolicyParams::zeros(2, 2), 1).unwrap();
        assert_eq!(d, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn marginals_follow_cycle() {
        let model = cycle_model();
        let d = state_marginals(&model, &PolicyParams::gaussian(3, 2, 1.0, 0).unwrap(), 5).unwrap();
        for (t, dt) in d.iter().enumerate() {
            for s in 0..3 {
                assert_eq!(dt[s], if s == t % 3 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let env = make_synthetic_two_state();
        let d = state_marginals(
            env.model(),
            &PolicyParams::gaussian(2, 2, 2.0, 1).unwrap(),
            40,
        )
        .unwrap();
        for dt in d {
            assert!((dt.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_reward_model_returns_zero() {
        let model = TabularModel::new(1, 2, 2, vec![1.0, 1.0], vec![0.0; 4], vec![1.0]).unwrap();
        let sch = DiscountSchedule::new(0.9, 10).unwrap();
        let j = exact_returns(&model, &PolicyParams::zeros(1, 2), &sch).unwrap();
        assert_eq!(j.j_exact, vec![0.0, 0.0]);
    }

    #[test]
    fn constant_reward_geometric() {
        let sch = DiscountSchedule::new(0.5, 3).unwrap();
        let j = exact_returns(&cycle_model(), &PolicyParams::zeros(3, 2), &sch).unwrap();
        assert!((j.j_exact[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn infinite_horizon_requires_discount() {
        assert!(
            exact_returns_infinite(&cycle_model(), &PolicyParams::zeros(3, 2), 1.0, 1e-10).is_err()
        );
        let h = reference_horizon(0.9, 1.0, 1e-10).unwrap();
        assert!(0.9f64.powi(h as i32) / 0.1 <= 1e-10);
        assert!(0.9f64.powi(h as i32 - 1) / 0.1 > 1e-10);
    }

    #[test]
    fn bandit_gradient_closed_form() {
        // ∇θ Σ_m w_m J_m = (diag π − ππᵀ) r̄·w at H = 1
        let rewards = vec![vec![1.0, 0.5], vec![0.25, 0.0], vec![0.75, 1.0]];
        let env = make_bandit(&rewards).unwrap();
        let policy = PolicyParams::from_flat(1, 3, vec![0.2, -0.4, 0.9]).unwrap();
        let w = vec![2.0, -1.0];
        let u = UtilitySpec::weighted_sum(w.clone());
        let sch = DiscountSchedule::new(0.9, 1).unwrap();
        let pi = policy.action_probabilities(0);
        let rw: Vec<f64> = rewards.iter().map(|r| r[0] * w[0] + r[1] * w[1]).collect();
        let mean: f64 = pi.iter().zip(&rw).map(|(p, r)| p * r).sum();
        let closed: Vec<f64> = (0..3).map(|a| pi[a] * (rw[a] - mean)).collect();
        let fd = exact_gradient(env.model(), &policy, &sch, &u).unwrap();
        let dp = analytic_gradient(env.model(), &policy, &sch, &u).unwrap();
        for a in 0..3 {
            assert!((fd[a] - closed[a]).abs() < 1e-8);
            assert!((dp[a] - closed[a]).abs() < 1e-14);
        }
    }

    #[test]
    fn reward_scaling_doubles_linear_gradient() {
        let env = make_synthetic_two_state();
        let doubled = TabularEnv::new("x2", env.model().scaled_rewards(2.0).unwrap(), 20).unwrap();
        let policy = PolicyParams::gaussian(2, 2, 0.5, 4).unwrap();
        let u = UtilitySpec::weighted_sum(vec![1.0, 0.5]);
        let sch = DiscountSchedule::new(0.9, 8).unwrap();
        let g1 = exact_gradient(env.model(), &policy, &sch, &u).unwrap();
        let g2 = exact_gradient(doubled.model(), &policy, &sch, &u).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_difference_step_agreement() {
        let env = make_synthetic_two_state();
        let policy = PolicyParams::gaussian(2, 2, 0.5, 5).unwrap();
        let u = UtilitySpec::sum_log(1.0);
        let sch = DiscountSchedule::new(0.9, 20).unwrap();
        let a = exact_gradient_with_step(env.model(), &policy, &sch, &u, 1e-4).unwrap();
        let b = exact_gradient_with_step(env.model(), &policy, &sch, &u, 1e-5).unwrap();
        let dp = analytic_gradient(env.model(), &policy, &sch, &u).unwrap();
        let diff = norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(diff / norm(&b) <= 1e-6);
        let diff = norm(&dp.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!(diff / norm(&b) <= 1e-8);
    }

    #[test]
    fn weighted_sum_has_no_term_i() {
        let env = make_synthetic_two_state();
        let policy = PolicyParams::gaussian(2, 2, 0.5, 6).unwrap();
        let u = UtilitySpec::weighted_sum(vec![1.0, 2.0]);
        let sch = DiscountSchedule::new(0.9, 5).unwrap();
        let r = measure_bias_terms(&env, &policy, &sch, &u, 4, 200, 0).unwrap();
        assert_eq!(r.term_i, 0.0);
        assert_eq!(r.bounds.term_i, 0.0);
        assert_eq!(r.term_ii, 0.0);
        assert!(r.term_iii > 0.0);
    }

    #[test]
    fn full_horizon_has_no_truncation_terms() {
        let env = make_synthetic_two_state();
        let policy = PolicyParams::zeros(2, 2);
        let u = UtilitySpec::sum_log(1.0);
        let h_ref = reference_horizon(0.9, 1.0, REFERENCE_TOL).unwrap();
        let sch = DiscountSchedule::new(0.9, h_ref).unwrap();
        let r = measure_bias_terms(&env, &policy, &sch, &u, 2, 50, 0).unwrap();
        assert_eq!(r.term_ii, 0.0);
        assert_eq!(r.term_iii, 0.0);
        assert!(r.term_i > 0.0);
    }

    #[test]
    fn bias_needs_model_and_discount() {
        let env = crate::envs::make_queuing(Default::default()).unwrap();
        let policy = PolicyParams::zeros(1296, 4);
        let sch = DiscountSchedule::new(0.9, 5).unwrap();
        let u = UtilitySpec::sum_log(1.0);
        assert!(matches!(
            measure_bias_terms(&env, &policy, &sch, &u, 2, 2, 0),
            Err(Error::Unsupported(_))
        ));
        let env = make_synthetic_two_state();
        let sch = DiscountSchedule::new(1.0, 5).unwrap();
        assert!(measure_bias_terms(&env, &PolicyParams::zeros(2, 2), &sch, &u, 2, 2, 0).is_err());
    }

    #[test]
    fn variance_zero_cases() {
        // deterministic policy on a cycle: every trajectory identical, scores vanish
        let env = TabularEnv::new("cycle", cycle_model(), 5).unwrap();
        let policy =
            PolicyParams::from_flat(3, 2, vec![800.0, 0.0, 800.0, 0.0, 800.0, 0.0]).unwrap();
        let sch = DiscountSchedule::new(0.9, 5).unwrap();
        let u = UtilitySpec::sum_log(1.0);
        let v = estimate_variance(&env, &policy, &sch, &u, 4, 100, 0).unwrap();
        assert_eq!(v.sigma2, 0.0);

        let zero = make_bandit(&[vec![0.0], vec![0.0]]).unwrap();
        let v = estimate_variance(&zero, &PolicyParams::zeros(1, 2), &sch, &u, 2, 100, 0).unwrap();
        assert_eq!(v.sigma2, 0.0);
        assert!(estimate_variance(&zero, &PolicyParams::zeros(1, 2), &sch, &u, 2, 1, 0).is_err());
    }

    #[test]
    fn truncation_gap_examples() {
        let model = cycle_model();
        let policy = PolicyParams::zeros(3, 2);
        let gaps = truncation_gap(&model, &policy, 0.5, &[2]).unwrap();
        // constant reward 1: tail is exactly 0.5²/(1−0.5)
        assert!((gaps[0].gap - 0.5).abs() < 1e-9);
        assert!(gaps[0].gap <= gaps[0].bound);
        let h_ref = reference_horizon(0.5, 1.0, REFERENCE_TOL).unwrap();
        let gaps = truncation_gap(&model, &policy, 0.5, &[h_ref]).unwrap();
        assert!(gaps[0].gap <= REFERENCE_TOL);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }
}
