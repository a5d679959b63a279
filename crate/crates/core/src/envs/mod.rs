//! Concrete environments and the explicit tabular model used by the exact oracles.

mod queuing;
mod wireless;

pub use queuing::{make_queuing, QueueConfig, QueueEnv};
pub use wireless::{make_wireless, WirelessConfig, WirelessEnv};

use crate::error::{config_err, Result};
use crate::mdp::{Environment, MdpSpec};
use crate::policy::sample_index;
use crate::stream::StreamRng;

const ROW_TOL: f64 = 1e-12;

/// Explicit transition probabilities, expected rewards and initial distribution.
///
/// Layouts are row-major: `transition[(s·|A| + a)·|S| + s']`,
/// `expected_reward[(s·|A| + a)·M + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    num_states: usize,
    num_actions: usize,
    num_objectives: usize,
    transition: Vec<f64>,
    expected_reward: Vec<f64>,
    initial: Vec<f64>,
}

impl TabularModel {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        num_objectives: usize,
        transition: Vec<f64>,
        expected_reward: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let (ns, na, nm) = (num_states, num_actions, num_objectives);
        if transition.len() != ns * na * ns {
            return Err(config_err("transition table has the wrong size"));
        }
        if expected_reward.len() != ns * na * nm {
            return Err(config_err("reward table has the wrong size"));
        }
        if initial.len() != ns {
            return Err(config_err("initial distribution has the wrong size"));
        }
        for (i, row) in transition.chunks(ns).enumerate() {
            if row.iter().any(|&p| p.is_nan() || p < 0.0)
                || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL
            {
                return Err(config_err(format!(
                    "transition row (s={}, a={}) is not a distribution",
                    i / na,
                    i % na
                )));
            }
        }
        if initial.iter().any(|&p| p.is_nan() || p < 0.0)
            || (initial.iter().sum::<f64>() - 1.0).abs() > ROW_TOL
        {
            return Err(config_err("initial distribution does not sum to 1"));
        }
        if expected_reward
            .iter()
            .any(|&r| !(r >= 0.0 && r.is_finite()))
        {
            return Err(config_err("expected rewards must be finite and >= 0"));
        }
        Ok(Self {
            num_states,
            num_actions,
            num_objectives,
            transition,
            expected_reward,
            initial,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    /// `P[s][a][·]`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    /// `r̄[s][a][·]`.
    pub fn reward(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_objectives;
        &self.expected_reward[start..start + self.num_objectives]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Largest expected reward over all entries.
    pub fn reward_max(&self) -> f64 {
        self.expected_reward.iter().copied().fold(0.0, f64::max)
    }

    /// `min_{s,a} r̄[s][a][m]` for each objective.
    pub fn reward_floor(&self) -> Vec<f64> {
        let mut floor = vec![f64::INFINITY; self.num_objectives];
        for row in self.expected_reward.chunks(self.num_objectives) {
            for (f, &r) in floor.iter_mut().zip(row) {
                *f = f.min(r);
            }
        }
        floor
    }

    /// Same model with every reward multiplied by `factor`.
    pub fn scaled_rewards(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        for r in &mut out.expected_reward {
            *r *= factor;
        }
        Self::new(
            out.num_states,
            out.num_actions,
            out.num_objectives,
            out.transition,
            out.expected_reward,
            out.initial,
        )
    }
}

/// An environment driven directly by a [`TabularModel`]; rewards are the
/// deterministic `r̄[s][a]`.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    name: String,
    spec: MdpSpec,
    model: TabularModel,
    default_horizon: usize,
}

impl TabularEnv {
    pub fn new(
        name: impl Into<String>,
        model: TabularModel,
        default_horizon: usize,
    ) -> Result<Self> {
        let spec = MdpSpec::new(
            model.num_states,
            model.num_actions,
            model.num_objectives,
            model.reward_max(),
        )?;
        Ok(Self {
            name: name.into(),
            spec,
            model,
            default_horizon,
        })
    }

    pub fn model(&self) -> &TabularModel {
        &self.model
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn sample_initial(&self, rng: &mut StreamRng) -> usize {
        sample_index(&self.model.initial, rng)
    }

    fn step(&self, state: usize, action: usize, reward: &mut [f64], rng: &mut StreamRng) -> usize {
        reward.copy_from_slice(self.model.reward(state, action));
        sample_index(self.model.transition_row(state, action), rng)
    }

    fn tabular_model(&self) -> Option<&TabularModel> {
        Some(&self.model)
    }

    fn default_horizon(&self) -> usize {
        self.default_horizon
    }
}

/// Fixed 2-state, 2-action, 2-objective MDP with rational probabilities and
/// strictly positive rewards in `[1/8, 1]`.
///
/// ```text
/// P[0][0] = (3/4, 1/4)   r[0][0] = (1,   1/4)
/// P[0][1] = (1/4, 3/4)   r[0][1] = (1/2, 1/2)
/// P[1][0] = (1/2, 1/2)   r[1][0] = (1/4, 1  )
/// P[1][1] = (1/8, 7/8)   r[1][1] = (1/8, 3/4)
/// ρ = (1/2, 1/2)
/// ```
pub fn make_synthetic_two_state() -> TabularEnv {
    let transition = vec![
        0.75, 0.25, //
        0.25, 0.75, //
        0.5, 0.5, //
        0.125, 0.875,
    ];
    let reward = vec![
        1.0, 0.25, //
        0.5, 0.5, //
        0.25, 1.0, //
        0.125, 0.75,
    ];
    let model = TabularModel::new(2, 2, 2, transition, reward, vec![0.5, 0.5])
        .expect("synthetic model is valid");
    TabularEnv::new("synthetic", model, 20).expect("synthetic spec is valid")
}

/// Single-state environment: `rewards[a]` is the reward vector of action `a`.
pub fn make_bandit(rewards: &[Vec<f64>]) -> Result<TabularEnv> {
    let na = rewards.len();
    let nm = rewards.first().map_or(0, Vec::len);
    if na == 0 || nm == 0 || rewards.iter().any(|r| r.len() != nm) {
        return Err(config_err(
            "bandit needs a non-empty rectangular reward table",
        ));
    }
    let model = TabularModel::new(1, na, nm, vec![1.0; na], rewards.concat(), vec![1.0])?;
    TabularEnv::new("bandit", model, 1)
}
