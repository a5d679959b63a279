//! Policy gradient for a concave utility of several discounted returns.
//!
//! A tabular softmax policy is trained by ascending `f(J_1, …, J_M)`, where each
//! `J_m` is a discounted return. Each episode estimates `Ĵ` from one batch of
//! trajectories, freezes the partials `∂f/∂J_m(Ĵ)`, and weights the per-step
//! scores of an independent batch by the scalarized reward-to-go.
//!
//! ```
//! use jointpg::envs::make_synthetic_two_state;
//! use jointpg::mdp::DiscountSchedule;
//! use jointpg::policy::PolicyParams;
//! use jointpg::trainer::{train, TrainerConfig};
//! use jointpg::utility::UtilitySpec;
//!
//! let env = make_synthetic_two_state();
//! let schedule = DiscountSchedule::new(0.9, 20).unwrap();
//! let mut config = TrainerConfig::new(schedule, UtilitySpec::sum_log(1.0));
//! config.episodes = 5;
//! config.n1 = 8;
//! config.n2 = 8;
//! let mut policy = PolicyParams::zeros(2, 2);
//! let log = train(&env, &mut policy, &config).unwrap();
//! assert_eq!(log.records.len(), 5);
//! ```

pub mod config;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod estimator;
pub mod mdp;
pub mod policy;
pub mod stream;
pub mod trainer;
pub mod utility;

#[cfg(feature = "cli")]
pub mod cli;

mod par;

pub use error::{Error, Result};
