//! Vector-reward MDPs: the environment interface, trajectories, rollouts and
//! discounted sums.

use std::io::Write;

use crate::envs::TabularModel;
use crate::error::{arg_err, config_err, Result};
use crate::policy::{ActionTable, PolicyParams};
use crate::stream::StreamRng;

/// Sizes of a vector-reward MDP and the per-step reward bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_objectives: usize,
    /// Every reward component lies in `[0, reward_max]`.
    pub reward_max: f64,
}

impl MdpSpec {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        num_objectives: usize,
        reward_max: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || num_objectives == 0 {
            return Err(config_err(
                "state, action and objective counts must be >= 1",
            ));
        }
        if !(reward_max >= 0.0 && reward_max.is_finite()) {
            return Err(config_err("reward_max must be finite and >= 0"));
        }
        Ok(Self {
            num_states,
            num_actions,
            num_objectives,
            reward_max,
        })
    }
}

/// An environment that can be rolled out.
///
/// Implementations are immutable; all per-rollout state lives in the caller,
/// so one environment can serve many concurrent rollouts.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &MdpSpec;

    /// Short identifier used in file names.
    fn name(&self) -> &str;

    /// Draws `s₀ ~ ρ`.
    fn sample_initial(&self, rng: &mut StreamRng) -> usize;

    /// Emits the reward of `(state, action)` into `reward` and returns the next state.
    fn step(&self, state: usize, action: usize, reward: &mut [f64], rng: &mut StreamRng) -> usize;

    /// Explicit `(P, r̄, ρ)` when the environment is small enough to provide one.
    fn tabular_model(&self) -> Option<&TabularModel> {
        None
    }

    /// Episode length used when a configuration does not set one.
    fn default_horizon(&self) -> usize {
        500
    }
}

/// Discount factor and truncation horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountSchedule {
    gamma: f64,
    horizon: usize,
}

impl DiscountSchedule {
    /// `gamma ∈ (0, 1]`, `horizon ≥ 1`.
    pub fn new(gamma: f64, horizon: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(arg_err(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if horizon == 0 {
            return Err(arg_err("horizon must be >= 1"));
        }
        Ok(Self { gamma, horizon })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.gamma, horizon)
    }

    /// Upper bound on any truncated return component: `r_max·(1−γ^H)/(1−γ)`, or `r_max·H` at `γ = 1`.
    pub fn return_bound(&self, reward_max: f64) -> f64 {
        reward_max * geometric_sum(self.gamma, self.horizon)
    }
}

/// `Σ_{t<n} γ^t`.
pub fn geometric_sum(gamma: f64, n: usize) -> f64 {
    if gamma == 1.0 {
        n as f64
    } else {
        (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}

/// One rollout: states, actions and reward vectors for `H` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    num_objectives: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(horizon: usize, num_objectives: usize) -> Self {
        Self {
            num_objectives,
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon * num_objectives),
        }
    }

    /// Appends one step.
    pub fn push(&mut self, state: usize, action: usize, reward: &[f64]) {
        assert_eq!(reward.len(), self.num_objectives);
        self.states.push(state);
        self.actions.push(action);
        self.rewards.extend_from_slice(reward);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    pub fn state(&self, t: usize) -> usize {
        self.states[t]
    }

    pub fn action(&self, t: usize) -> usize {
        self.actions[t]
    }

    pub fn rewards(&self, t: usize) -> &[f64] {
        &self.rewards[t * self.num_objectives..(t + 1) * self.num_objectives]
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// The first `h` steps.
    pub fn prefix(&self, h: usize) -> Trajectory {
        let h = h.min(self.len());
        Trajectory {
            num_objectives: self.num_objectives,
            states: self.states[..h].to_vec(),
            actions: self.actions[..h].to_vec(),
            rewards: self.rewards[..h * self.num_objectives].to_vec(),
        }
    }

    /// Debug dump, one step per line: `t,state,action,r_0,...,r_{M−1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,state,action")?;
        for m in 0..self.num_objectives {
            write!(w, ",r_{m}")?;
        }
        writeln!(w)?;
        for t in 0..self.len() {
            write!(w, "{t},{},{}", self.states[t], self.actions[t])?;
            for r in self.rewards(t) {
                write!(w, ",{r}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Rolls out one fixed policy repeatedly.
///
/// Holds the policy's probability table so repeated rollouts do not redo the softmax.
pub struct Rollout<'a> {
    env: &'a dyn Environment,
    table: ActionTable,
}

impl<'a> Rollout<'a> {
    pub fn new(env: &'a dyn Environment, policy: &PolicyParams) -> Result<Self> {
        check_dims(env.spec(), policy)?;
        Ok(Self {
            env,
            table: policy.table(),
        })
    }

    pub fn env(&self) -> &'a dyn Environment {
        self.env
    }

    pub fn sample(&self, horizon: usize, rng: &mut StreamRng) -> Trajectory {
        let m = self.env.spec().num_objectives;
        let mut traj = Trajectory::with_capacity(horizon, m);
        let mut reward = vec![0.0; m];
        let mut s = self.env.sample_initial(rng);
        for _ in 0..horizon {
            let a = self.table.sample(s, rng);
            let next = self.env.step(s, a, &mut reward, rng);
            traj.push(s, a, &reward);
            s = next;
        }
        traj
    }

    /// Adds the discounted return of one fresh rollout into `acc` without storing the path.
    ///
    /// Consumes the generator exactly as [`sample`](Self::sample) does.
    pub fn accumulate_return(
        &self,
        schedule: &DiscountSchedule,
        rng: &mut StreamRng,
        acc: &mut [f64],
    ) {
        let m = self.env.spec().num_objectives;
        let mut reward = vec![0.0; m];
        let mut s = self.env.sample_initial(rng);
        let mut discount = 1.0;
        for _ in 0..schedule.horizon() {
            let a = self.table.sample(s, rng);
            s = self.env.step(s, a, &mut reward, rng);
            for (acc, r) in acc.iter_mut().zip(&reward) {
                *acc += discount * r;
            }
            discount *= schedule.gamma();
        }
    }
}

pub(crate) fn check_dims(spec: &MdpSpec, policy: &PolicyParams) -> Result<()> {
    if spec.num_states != policy.num_states() || spec.num_actions != policy.num_actions() {
        return Err(config_err(format!(
            "environment is {}x{} but policy is {}x{}",
            spec.num_states,
            spec.num_actions,
            policy.num_states(),
            policy.num_actions()
        )));
    }
    Ok(())
}

/// Samples a trajectory of exactly `schedule.horizon()` steps.
pub fn sample_trajectory(
    env: &dyn Environment,
    policy: &PolicyParams,
    schedule: &DiscountSchedule,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    Ok(Rollout::new(env, policy)?.sample(schedule.horizon(), rng))
}

/// `Σ_{h=t}^{H−1} γ^h r_m(s_h, a_h)`, discounting from the start of the episode.
pub fn tail_return(
    traj: &Trajectory,
    schedule: &DiscountSchedule,
    t: usize,
    m: usize,
) -> Result<f64> {
    if t >= traj.len() {
        return Err(arg_err(format!(
            "step {t} outside trajectory of length {}",
            traj.len()
        )));
    }
    if m >= traj.num_objectives() {
        return Err(arg_err(format!(
            "objective {m} outside 0..{}",
            traj.num_objectives()
        )));
    }
    let g = schedule.gamma();
    let mut discount = g.powi(t as i32);
    let mut total = 0.0;
    for h in t..traj.len() {
        total += discount * traj.rewards(h)[m];
        discount *= g;
    }
    Ok(total)
}

/// Discounted return of each objective over the whole trajectory.
pub fn episode_return(traj: &Trajectory, schedule: &DiscountSchedule) -> Vec<f64> {
    let mut out = vec![0.0; traj.num_objectives()];
    let mut discount = 1.0;
    for t in 0..traj.len() {
        for (o, r) in out.iter_mut().zip(traj.rewards(t)) {
            *o += discount * r;
        }
        discount *= schedule.gamma();
    }
    out
}

/// All tail sums at once: entry `t·M + m` is `tail_return(traj, t, m)`.
pub(crate) fn tail_returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let m = traj.num_objectives();
    let h = traj.len();
    let mut tails = vec![0.0; h * m];
    if h == 0 {
        return tails;
    }
    let mut discounts = Vec::with_capacity(h);
    let mut d = 1.0;
    for _ in 0..h {
        discounts.push(d);
        d *= gamma;
    }
    for t in (0..h).rev() {
        for k in 0..m {
            let next = if t + 1 < h {
                tails[(t + 1) * m + k]
            } else {
                0.0
            };
            tails[t * m + k] = discounts[t] * traj.rewards(t)[k] + next;
        }
    }
    tails
}
