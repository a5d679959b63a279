use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TabularModel;
use crate::error::{config_err, Result};
use crate::mdp::{Environment, MdpSpec};
use crate::stream::StreamRng;

/// Largest user count for which the explicit transition table is built.
const MAX_TABULAR_USERS: usize = 6;

/// Good/bad two-state channel per user; the scheduler serves one user per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WirelessConfig {
    pub num_users: usize,
    /// `[good, bad]` rate of each user in Mbps.
    pub rates: Vec<[f64; 2]>,
    pub toggle_prob: f64,
    pub horizon: usize,
}

impl Default for WirelessConfig {
    fn default() -> Self {
        Self {
            num_users: 4,
            rates: vec![[1.5, 0.768], [2.25, 1.0], [1.25, 0.384], [1.5, 1.12]],
            toggle_prob: 0.1,
            horizon: 500,
        }
    }
}

impl WirelessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_users > 20 {
            return Err(config_err("wireless num_users must lie in 1..=20"));
        }
        if self.rates.len() != self.num_users {
            return Err(config_err(format!(
                "wireless rates has {} rows for {} users",
                self.rates.len(),
                self.num_users
            )));
        }
        if self
            .rates
            .iter()
            .flatten()
            .any(|&r| !(r >= 0.0 && r.is_finite()))
        {
            return Err(config_err("wireless rates must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.toggle_prob) {
            return Err(config_err("toggle_prob must lie in [0, 1]"));
        }
        if self.horizon == 0 {
            return Err(config_err("wireless horizon must be >= 1"));
        }
        Ok(())
    }
}

/// State id bit `k` is set when user `k` is in the good state.
#[derive(Debug, Clone)]
pub struct WirelessEnv {
    config: WirelessConfig,
    spec: MdpSpec,
    model: Option<TabularModel>,
}

pub fn make_wireless(config: WirelessConfig) -> Result<WirelessEnv> {
    config.validate()?;
    let n = config.num_users;
    let reward_max = config.rates.iter().flatten().copied().fold(0.0, f64::max);
    let spec = MdpSpec::new(1 << n, n, n, reward_max)?;
    let mut env = WirelessEnv {
        config,
        spec,
        model: None,
    };
    if n <= MAX_TABULAR_USERS {
        env.model = Some(env.build_model()?);
    }
    Ok(env)
}

impl WirelessEnv {
    pub fn config(&self) -> &WirelessConfig {
        &self.config
    }

    pub fn is_good(&self, state: usize, user: usize) -> bool {
        state >> user & 1 == 1
    }

    /// Rate of `user` in `state`.
    pub fn rate(&self, state: usize, user: usize) -> f64 {
        let [good, bad] = self.config.rates[user];
        if self.is_good(state, user) {
            good
        } else {
            bad
        }
    }

    fn build_model(&self) -> Result<TabularModel> {
        let n = self.config.num_users;
        let ns = 1usize << n;
        let q = self.config.toggle_prob;
        let mut transition = Vec::with_capacity(ns * n * ns);
        let mut reward = Vec::with_capacity(ns * n * n);
        for s in 0..ns {
            let row: Vec<f64> = (0..ns)
                .map(|next| {
                    let flips = (s ^ next).count_ones() as i32;
                    q.powi(flips) * (1.0 - q).powi(n as i32 - flips)
                })
                .collect();
            for a in 0..n {
                transition.extend_from_slice(&row);
                reward.extend((0..n).map(|m| if m == a { self.rate(s, a) } else { 0.0 }));
            }
        }
        TabularModel::new(ns, n, n, transition, reward, vec![1.0 / ns as f64; ns])
    }
}

impl Environment for WirelessEnv {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn name(&self) -> &str {
        "wireless"
    }

    fn sample_initial(&self, rng: &mut StreamRng) -> usize {
        (0..self.config.num_users).fold(0, |s, k| {
            if rng.gen::<f64>() < 0.5 {
                s | 1 << k
            } else {
                s
            }
        })
    }

    fn step(&self, state: usize, action: usize, reward: &mut [f64], rng: &mut StreamRng) -> usize {
        reward.fill(0.0);
        reward[action] = self.rate(state, action);
        let mut next = state;
        for k in 0..self.config.num_users {
            if rng.gen::<f64>() < self.config.toggle_prob {
                next ^= 1 << k;
            }
        }
        next
    }

    fn tabular_model(&self) -> Option<&TabularModel> {
        self.model.as_ref()
    }

    fn default_horizon(&self) -> usize {
        self.config.horizon
    }
}
