//! The sample / estimate / ascend loop.
//!
//! Each episode draws `N₂` trajectories for `Ĵ`, an independent `N₁` for
//! `ω`, and moves `θ` uphill with the configured step rule.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::estimator::{sample_batch_gradient, sample_return_estimate, EstimatorVariant};
use crate::mdp::{check_dims, DiscountSchedule, Environment, Rollout};
use crate::policy::PolicyParams;
use crate::stream::{Batch, StreamId};
use crate::utility::UtilitySpec;

/// Smoothness constant of `log π` for the tabular softmax: the Hessian of a
/// log-softmax row is `−(diag π − ππᵀ)`, whose spectral norm is at most 1/2.
pub const SOFTMAX_SMOOTHNESS: f64 = 0.5;

/// Bound on `‖∇θ log π(a|s)‖₂` for the tabular softmax.
pub const SOFTMAX_SCORE_BOUND: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "optimizer", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    Constant {
        eta: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl StepRule {
    pub fn adam(lr: f64) -> Self {
        StepRule::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Constant { eta } if !(eta >= 0.0 && eta.is_finite()) => {
                Err(config_err("constant step size must be finite and >= 0"))
            }
            StepRule::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(config_err("adam lr must be finite and > 0"));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(config_err("adam betas must lie in [0, 1)"));
                }
                if eps.is_nan() || eps <= 0.0 {
                    return Err(config_err("adam eps must be > 0"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Step rule plus whatever state it carries between episodes.
#[derive(Debug, Clone)]
pub struct StepState {
    rule: StepRule,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: i32,
}

impl StepState {
    pub fn new(rule: StepRule, dim: usize) -> Self {
        Self {
            rule,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            steps: 0,
        }
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }
}

/// Ascent step `θ ← θ + Δ(ω)`.
pub fn apply_step(state: &mut StepState, theta: &mut [f64], omega: &[f64]) -> Result<()> {
    if theta.len() != omega.len() || (theta.len() != state.first_moment.len()) {
        return Err(config_err("step dimensions disagree"));
    }
    match state.rule {
        StepRule::Constant { eta } => {
            for (t, w) in theta.iter_mut().zip(omega) {
                *t += eta * w;
            }
        }
        StepRule::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            state.steps += 1;
            let c1 = 1.0 - beta1.powi(state.steps);
            let c2 = 1.0 - beta2.powi(state.steps);
            for i in 0..theta.len() {
                let g = omega[i];
                let m = &mut state.first_moment[i];
                let v = &mut state.second_moment[i];
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                theta[i] += lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Where the logged objective comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSource {
    /// `f(Ĵ)` from the episode's own return batch.
    #[default]
    N2Batch,
    /// `f` of a separate estimate over `size` extra trajectories.
    FreshBatch { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub n1: usize,
    pub n2: usize,
    pub schedule: DiscountSchedule,
    pub step_rule: StepRule,
    pub seed: u64,
    pub utility: UtilitySpec,
    pub objective_source: ObjectiveSource,
    pub variant: EstimatorVariant,
    /// Fill the `ms` column with wall-clock time; off keeps logs reproducible byte for byte.
    pub record_timing: bool,
}

impl TrainerConfig {
    pub fn new(schedule: DiscountSchedule, utility: UtilitySpec) -> Self {
        Self {
            episodes: 200,
            n1: 64,
            n2: 64,
            schedule,
            step_rule: StepRule::adam(0.01),
            seed: 0,
            utility,
            objective_source: ObjectiveSource::N2Batch,
            variant: EstimatorVariant::RewardToGo,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.n1 == 0 || self.n2 == 0 {
            return Err(config_err("episodes, n1 and n2 must be >= 1"));
        }
        if let ObjectiveSource::FreshBatch { size: 0 } = self.objective_source {
            return Err(config_err("fresh evaluation batch must be >= 1"));
        }
        self.step_rule.validate()?;
        self.utility.validate()
    }

    /// Streams consumed in one episode. Batches never share a stream.
    pub fn episode_streams(&self, episode: usize) -> EpisodeStreams {
        let ids = |batch, n: usize| {
            (0..n as u64)
                .map(|i| StreamId::new(self.seed, episode as u64, batch, i))
                .collect::<Vec<_>>()
        };
        EpisodeStreams {
            returns: ids(Batch::Returns, self.n2),
            gradient: ids(Batch::Gradient, self.n1),
            evaluation: match self.objective_source {
                ObjectiveSource::N2Batch => Vec::new(),
                ObjectiveSource::FreshBatch { size } => ids(Batch::Evaluation, size),
            },
        }
    }

    /// `L_J = M·C·B/(1−γ)²` with the softmax `B` and the utility's `C` on the
    /// clamped domain; `None` at `γ = 1`.
    pub fn smoothness_constant(&self, num_objectives: usize) -> Option<f64> {
        let gamma = self.schedule.gamma();
        if gamma >= 1.0 {
            return None;
        }
        let c = self.utility.partial_bound(self.utility.clamp_floor);
        Some(num_objectives as f64 * c * SOFTMAX_SMOOTHNESS / (1.0 - gamma).powi(2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStreams {
    pub returns: Vec<StreamId>,
    pub gradient: Vec<StreamId>,
    pub evaluation: Vec<StreamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub objective: f64,
    pub j_hat: Vec<f64>,
    pub grad_norm: f64,
    pub clamped: bool,
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub num_objectives: usize,
    pub records: Vec<EpisodeRecord>,
    /// `L_J` for comparison with a constant step size (`η ≤ 1/(4·L_J)`).
    pub smoothness_constant: Option<f64>,
}

impl RunLog {
    /// Mean logged objective over the last `n` episodes.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        tail.iter().map(|r| r.objective).sum::<f64>() / tail.len() as f64
    }

    /// `episode,objective,J_0..J_{M−1},grad_norm,clamped,ms`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "episode,objective")?;
        for m in 0..self.num_objectives {
            write!(w, ",J_{m}")?;
        }
        writeln!(w, ",grad_norm,clamped,ms")?;
        for r in &self.records {
            write!(w, "{},{}", r.episode, r.objective)?;
            for j in &r.j_hat {
                write!(w, ",{j}")?;
            }
            writeln!(w, ",{},{},{}", r.grad_norm, r.clamped as u8, r.ms)?;
        }
        Ok(())
    }
}

/// Runs `config.episodes` ascent steps on `policy`.
pub fn train(
    env: &dyn Environment,
    policy: &mut PolicyParams,
    config: &TrainerConfig,
) -> Result<RunLog> {
    config.validate()?;
    check_dims(env.spec(), policy)?;
    let m = env.spec().num_objectives;
    if let crate::utility::UtilityKind::WeightedSum { weights } = &config.utility.kind {
        if weights.len() != m {
            return Err(config_err(
                "utility weights do not match the environment's objectives",
            ));
        }
    }
    let schedule = &config.schedule;
    let mut step = StepState::new(config.step_rule, policy.dim());
    let mut log = RunLog {
        num_objectives: m,
        records: Vec::with_capacity(config.episodes),
        smoothness_constant: config.smoothness_constant(m),
    };
    for k in 0..config.episodes {
        // the clock is never read unless asked for; some targets have none
        let started = config.record_timing.then(Instant::now);
        let streams = config.episode_streams(k);
        let rollout = Rollout::new(env, policy)?;
        let returns = sample_return_estimate(&rollout, schedule, &streams.returns)?;
        let grad = sample_batch_gradient(
            &rollout,
            policy,
            &returns,
            &config.utility,
            schedule,
            config.variant,
            &streams.gradient,
        )?;
        let objective = match config.objective_source {
            ObjectiveSource::N2Batch => config.utility.value(&returns.j_hat)?,
            ObjectiveSource::FreshBatch { .. } => {
                let fresh = sample_return_estimate(&rollout, schedule, &streams.evaluation)?;
                config.utility.value(&fresh.j_hat)?
            }
        };
        let grad_norm = grad.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteGradient {
                episode: k,
                log: Box::new(log),
            });
        }
        apply_step(&mut step, policy.as_mut_slice(), &grad.omega)?;
        log.records.push(EpisodeRecord {
            episode: k,
            objective,
            j_hat: returns.j_hat,
            grad_norm,
            clamped: grad.clamped,
            ms: started.map_or(0, |t| t.elapsed().as_millis() as u64),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_synthetic_two_state;
    use std::collections::HashSet;

    fn config() -> TrainerConfig {
        let mut c = TrainerConfig::new(
            DiscountSchedule::new(0.9, 10).unwrap(),
            UtilitySpec::sum_log(1.0),
        );
        c.episodes = 5;
        c.n1 = 8;
        c.n2 = 8;
        c
    }

    #[test]
    fn constant_step_example() {
        let mut s = StepState::new(StepRule::Constant { eta: 0.5 }, 2);
        let mut theta = [0.0, 0.0];
        apply_step(&mut s, &mut theta, &[2.0, -2.0]).unwrap();
        assert_eq!(theta, [1.0, -1.0]);
        apply_step(&mut s, &mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, [1.0, -1.0]);
    }

    #[test]
    fn adam_matches_hand_recursion() {
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut s = StepState::new(StepRule::adam(lr), 3);
        let mut theta = [0.1, -0.2, 0.3];
        let grads = [[0.5, -1.5, 0.0], [0.25, 2.0, -1e-3]];
        let mut expect = theta;
        let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
        for (t, g) in grads.iter().enumerate() {
            apply_step(&mut s, &mut theta, g).unwrap();
            let t = t as i32 + 1;
            for i in 0..3 {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                expect[i] += lr * mh / (vh.sqrt() + eps);
            }
            for i in 0..3 {
                assert!((theta[i] - expect[i]).abs() < 1e-12);
            }
        }
        // first step moves each coordinate by lr·sign(g) up to eps
        let mut s = StepState::new(StepRule::adam(lr), 1);
        let mut th = [0.0];
        apply_step(&mut s, &mut th, &[-3.0]).unwrap();
        assert!((th[0] + lr).abs() < 1e-9);
    }

    #[test]
    fn zero_step_leaves_theta_but_logs() {
        let env = make_synthetic_two_state();
        let mut policy = PolicyParams::gaussian(2, 2, 0.3, 0).unwrap();
        let before = policy.clone();
        let mut c = config();
        c.step_rule = StepRule::Constant { eta: 0.0 };
        let log = train(&env, &mut policy, &c).unwrap();
        assert_eq!(policy, before);
        assert_eq!(log.records.len(), 5);
        assert!(log.records.iter().enumerate().all(|(i, r)| r.episode == i));
    }

    #[test]
    fn deterministic_log() {
        let env = make_synthetic_two_state();
        let c = config();
        let mut p1 = PolicyParams::zeros(2, 2);
        let mut p2 = PolicyParams::zeros(2, 2);
        let a = train(&env, &mut p1, &c).unwrap();
        let b = train(&env, &mut p2, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(p1, p2);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x)
            .unwrap()
            .starts_with("episode,objective,J_0,J_1,grad_norm,clamped,ms\n"));
    }

    #[test]
    fn streams_disjoint_within_and_across_episodes() {
        let mut c = config();
        c.objective_source = ObjectiveSource::FreshBatch { size: 4 };
        let mut seen = HashSet::new();
        for k in 0..c.episodes {
            let s = c.episode_streams(k);
            assert_eq!(s.returns.len(), c.n2);
            assert_eq!(s.gradient.len(), c.n1);
            for id in s.returns.iter().chain(&s.gradient).chain(&s.evaluation) {
                assert!(seen.insert(*id), "stream reused: {id:?}");
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let env = make_synthetic_two_state();
        let mut p = PolicyParams::zeros(3, 2);
        assert!(matches!(
            train(&env, &mut p, &config()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn overflow_aborts_with_partial_log() {
        let env = make_synthetic_two_state();
        let mut p = PolicyParams::zeros(2, 2);
        let mut c = config();
        c.utility = UtilitySpec::weighted_sum(vec![f64::MAX, f64::MAX]);
        match train(&env, &mut p, &c) {
            Err(Error::NonFiniteGradient { episode, log }) => {
                assert_eq!(episode, 0);
                assert!(log.records.is_empty());
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn smoothness_constant_reported() {
        let c = config();
        let lj = c.smoothness_constant(2).unwrap();
        let expect = 2.0 * (1.0 / 1e-6) * 0.5 / (0.1f64 * 0.1);
        assert!((lj - expect).abs() / expect < 1e-12);
        let mut c1 = c.clone();
        c1.schedule = DiscountSchedule::new(1.0, 10).unwrap();
        assert!(c1.smoothness_constant(2).is_none());
    }
}
