//! Experiment configuration files.
//!
//! A config is a JSON object with `env`, `trainer`, `sweep`, `diagnostics` and
//! `output` blocks. Omitted fields take per-environment defaults; the resolved
//! form has every field filled and re-parses to itself.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::envs::{
    make_queuing, make_synthetic_two_state, make_wireless, QueueConfig, WirelessConfig,
};
use crate::error::{Error, Result};
use crate::estimator::EstimatorVariant;
use crate::mdp::{DiscountSchedule, Environment};
use crate::policy::PolicyParams;
use crate::trainer::{ObjectiveSource, StepRule, TrainerConfig};
use crate::utility::{UtilityKind, UtilitySpec, DEFAULT_CLAMP_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Wireless(WirelessConfig),
    Queuing(QueueConfig),
    /// The two-state, two-objective model with an explicit transition table.
    Synthetic,
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Wireless(_) => "wireless",
            EnvConfig::Queuing(_) => "queuing",
            EnvConfig::Synthetic => "synthetic",
        }
    }

    /// A default block for `name`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "wireless" => Ok(EnvConfig::Wireless(WirelessConfig::default())),
            "queuing" => Ok(EnvConfig::Queuing(QueueConfig::default())),
            "synthetic" => Ok(EnvConfig::Synthetic),
            other => Err(Error::Config(format!(
                "unknown env `{other}` (expected wireless, queuing or synthetic)"
            ))),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Wireless(c) => Box::new(make_wireless(c.clone())?),
            EnvConfig::Queuing(c) => Box::new(make_queuing(c.clone())?),
            EnvConfig::Synthetic => Box::new(make_synthetic_two_state()),
        })
    }

    fn default_horizon(&self) -> usize {
        match self {
            EnvConfig::Wireless(c) => c.horizon,
            EnvConfig::Queuing(c) => c.horizon,
            EnvConfig::Synthetic => 20,
        }
    }

    fn default_gamma(&self) -> f64 {
        match self {
            EnvConfig::Synthetic => 0.9,
            _ => 1.0,
        }
    }

    fn default_lr(&self) -> f64 {
        match self {
            EnvConfig::Queuing(_) => 0.005,
            _ => 0.01,
        }
    }

    fn default_utility(&self, horizon: usize) -> UtilityChoice {
        let scale = Some(horizon as f64);
        match self {
            EnvConfig::Wireless(_) => UtilityChoice::AlphaFairInverse { scale },
            EnvConfig::Queuing(_) => UtilityChoice::SumLog { scale },
            EnvConfig::Synthetic => UtilityChoice::SumLog { scale: Some(1.0) },
        }
    }
}

/// Utility block; a missing `scale` defaults to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityChoice {
    AlphaFairInverse {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    SumLog {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    WeightedSum {
        weights: Vec<f64>,
    },
}

impl UtilityChoice {
    /// Parses a `--utility` flag value.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "alpha_fair" | "alpha_fair_inverse" => Ok(UtilityChoice::AlphaFairInverse { scale: None }),
            "sum_log" => Ok(UtilityChoice::SumLog { scale: None }),
            other => Err(Error::Config(format!(
                "unknown utility `{other}` (expected alpha_fair or sum_log; weighted_sum needs a config file)"
            ))),
        }
    }

    fn filled(&self, horizon: usize) -> Self {
        let fill = |s: &Option<f64>| Some(s.unwrap_or(horizon as f64));
        match self {
            UtilityChoice::AlphaFairInverse { scale } => {
                UtilityChoice::AlphaFairInverse { scale: fill(scale) }
            }
            UtilityChoice::SumLog { scale } => UtilityChoice::SumLog { scale: fill(scale) },
            UtilityChoice::WeightedSum { weights } => UtilityChoice::WeightedSum {
                weights: weights.clone(),
            },
        }
    }

    fn kind(&self, horizon: usize) -> UtilityKind {
        match self.filled(horizon) {
            UtilityChoice::AlphaFairInverse { scale } => UtilityKind::AlphaFairInverse {
                scale: scale.unwrap_or_default(),
            },
            UtilityChoice::SumLog { scale } => UtilityKind::SumLog {
                scale: scale.unwrap_or_default(),
            },
            UtilityChoice::WeightedSum { weights } => UtilityKind::WeightedSum { weights },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// `θ = 0`: the uniform policy.
    #[default]
    Zeros,
    Gaussian {
        std: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainerBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_rule: Option<StepRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_source: Option<ObjectiveSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<EstimatorVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_timing: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
}

/// `N₁ = N₂ = N` for every `n_values` entry crossed with every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Episodes averaged for the final-objective table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_episodes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_samples: Option<usize>,
    /// `N₁ = N₂` of the estimator-vs-oracle comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_reps: Option<usize>,
    /// Relative error allowed in the estimator comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator_tol: Option<f64>,
    /// Standard errors of slack on each bias bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub trainer: TrainerBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsBlock>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One training job of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub n: usize,
    pub seed: u64,
    pub trainer: TrainerConfig,
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig) -> Self {
        Self {
            env,
            trainer: TrainerBlock::default(),
            sweep: None,
            diagnostics: None,
            output: default_output(),
        }
    }

    /// Parses and resolves `text`; errors name the offending line.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_unresolved(text)?.finish(text)
    }

    /// Parses `text` without filling defaults.
    pub fn parse_unresolved(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Config(format!(
                "line {} column {}: {}",
                e.line(),
                e.column(),
                strip_position(&e)
            ))
        })
    }

    /// Resolves and validates; `source` is the text used to anchor error lines.
    pub fn finish(&self, source: &str) -> Result<Self> {
        let resolved = self.resolved();
        resolved.validate().map_err(|e| anchor(source, e))?;
        Ok(resolved)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Fills every optional trainer and diagnostics field with its default.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let env = &self.env;
        let t = &mut out.trainer;
        let horizon = *t.horizon.get_or_insert(env.default_horizon());
        t.gamma.get_or_insert(env.default_gamma());
        t.episodes.get_or_insert(200);
        t.n1.get_or_insert(64);
        t.n2.get_or_insert(64);
        t.seed.get_or_insert(0);
        t.step_rule.get_or_insert(StepRule::adam(env.default_lr()));
        let utility = t
            .utility
            .take()
            .unwrap_or_else(|| env.default_utility(horizon));
        t.utility = Some(utility.filled(horizon));
        t.clamp_floor.get_or_insert(DEFAULT_CLAMP_FLOOR);
        t.objective_source.get_or_insert(ObjectiveSource::N2Batch);
        t.variant.get_or_insert(EstimatorVariant::RewardToGo);
        t.record_timing.get_or_insert(false);
        t.init.get_or_insert(InitConfig::Zeros);
        if let Some(sweep) = &mut out.sweep {
            sweep.tail_episodes.get_or_insert(10);
        }
        let d = out
            .diagnostics
            .get_or_insert_with(DiagnosticsBlock::default);
        d.n2_values.get_or_insert_with(|| vec![4, 16, 64, 256]);
        d.horizons.get_or_insert_with(|| vec![5, 10, 20]);
        d.bias_reps.get_or_insert(100_000);
        d.variance_samples.get_or_insert(100_000);
        d.estimator_n.get_or_insert(20_000);
        d.estimator_reps.get_or_insert(16);
        d.estimator_tol.get_or_insert(0.05);
        d.slack_se.get_or_insert(3.0);
        out
    }

    /// Checks a resolved config. Error messages start with the offending key.
    pub fn validate(&self) -> Result<()> {
        self.env.build()?;
        let base = self.trainer_config().map_err(|e| prefix("trainer", e))?;
        base.validate().map_err(|e| prefix("trainer", e))?;
        if let Some(sweep) = &self.sweep {
            if sweep.n_values.contains(&0) {
                return Err(Error::Config("n_values: entries must be >= 1".into()));
            }
            if sweep.tail_episodes == Some(0) {
                return Err(Error::Config("tail_episodes: must be >= 1".into()));
            }
        }
        if let Some(d) = &self.diagnostics {
            let bad = |xs: &Option<Vec<usize>>| {
                xs.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0))
            };
            if bad(&d.n2_values) {
                return Err(Error::Config(
                    "n2_values: need at least one entry, all >= 1".into(),
                ));
            }
            if bad(&d.horizons) {
                return Err(Error::Config(
                    "horizons: need at least one entry, all >= 1".into(),
                ));
            }
            for (key, v) in [
                ("bias_reps", d.bias_reps),
                ("estimator_n", d.estimator_n),
                ("estimator_reps", d.estimator_reps),
            ] {
                if v == Some(0) {
                    return Err(Error::Config(format!("{key}: must be >= 1")));
                }
            }
            if d.variance_samples.is_some_and(|v| v < 2) {
                return Err(Error::Config("variance_samples: must be >= 2".into()));
            }
        }
        Ok(())
    }

    /// The trainer block as a [`TrainerConfig`]; the block must be resolved.
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let t = &self.trainer;
        let missing = || Error::Config("config is not resolved".into());
        let horizon = t.horizon.ok_or_else(missing)?;
        let schedule = DiscountSchedule::new(t.gamma.ok_or_else(missing)?, horizon)?;
        let utility = UtilitySpec::with_kind(t.utility.as_ref().ok_or_else(missing)?.kind(horizon))
            .with_clamp_floor(t.clamp_floor.ok_or_else(missing)?);
        let mut cfg = TrainerConfig::new(schedule, utility);
        cfg.episodes = t.episodes.ok_or_else(missing)?;
        cfg.n1 = t.n1.ok_or_else(missing)?;
        cfg.n2 = t.n2.ok_or_else(missing)?;
        cfg.seed = t.seed.ok_or_else(missing)?;
        cfg.step_rule = t.step_rule.ok_or_else(missing)?;
        cfg.objective_source = t.objective_source.ok_or_else(missing)?;
        cfg.variant = t.variant.ok_or_else(missing)?;
        cfg.record_timing = t.record_timing.ok_or_else(missing)?;
        Ok(cfg)
    }

    pub fn initial_policy(&self, env: &dyn Environment) -> Result<PolicyParams> {
        let spec = env.spec();
        match self.trainer.init.unwrap_or_default() {
            InitConfig::Zeros => Ok(PolicyParams::zeros(spec.num_states, spec.num_actions)),
            InitConfig::Gaussian { std, seed } => {
                PolicyParams::gaussian(spec.num_states, spec.num_actions, std, seed)
            }
        }
    }

    /// Jobs in sweep order: `N` outer, seed inner. An empty or missing sweep
    /// is a single run at the trainer block's own `N₁`, `N₂` and seed.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        let base = self.trainer_config()?;
        let sweep = self.sweep.clone().unwrap_or_default();
        let ns = if sweep.n_values.is_empty() {
            vec![None]
        } else {
            sweep.n_values.iter().map(|&n| Some(n)).collect()
        };
        let seeds = if sweep.seeds.is_empty() {
            vec![base.seed]
        } else {
            sweep.seeds.clone()
        };
        let mut runs = Vec::with_capacity(ns.len() * seeds.len());
        for n in &ns {
            for &seed in &seeds {
                let mut trainer = base.clone();
                if let Some(n) = n {
                    trainer.n1 = *n;
                    trainer.n2 = *n;
                }
                trainer.seed = seed;
                runs.push(RunSpec {
                    n: n.unwrap_or(base.n1),
                    seed,
                    trainer,
                });
            }
        }
        Ok(runs)
    }
}

fn strip_position(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg,
    }
}

fn prefix(key: &str, e: Error) -> Error {
    match e {
        Error::Config(m) | Error::Argument(m) => Error::Config(format!("{key}: {m}")),
        other => other,
    }
}

/// Prepends `line N:` for the first quoted key the message names.
fn anchor(text: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) | Error::Argument(m) => m,
        other => return other,
    };
    let key = msg.split(':').next().unwrap_or("").trim();
    let needle = format!("\"{key}\"");
    let line = text
        .lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
        .unwrap_or(1);
    Error::Config(format!("line {line}: {msg}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_env_defaults() {
        let c = ExperimentConfig::parse(r#"{"env": {"kind": "queuing"}}"#).unwrap();
        let t = c.trainer_config().unwrap();
        assert_eq!(t.schedule.horizon(), 500);
        assert_eq!(t.schedule.gamma(), 1.0);
        assert_eq!(t.utility.kind, UtilityKind::SumLog { scale: 500.0 });
        assert_eq!(t.step_rule, StepRule::adam(0.005));

        let c =
            ExperimentConfig::parse(r#"{"env": {"kind": "wireless"}, "trainer": {"horizon": 50}}"#)
                .unwrap();
        let t = c.trainer_config().unwrap();
        assert_eq!(
            t.utility.kind,
            UtilityKind::AlphaFairInverse { scale: 50.0 }
        );
        assert_eq!(t.step_rule, StepRule::adam(0.01));
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"{
            "env": {"kind": "wireless", "toggle_prob": 0.2},
            "trainer": {"episodes": 3, "step_rule": {"optimizer": "constant", "eta": 0.1}},
            "sweep": {"n_values": [1, 4], "seeds": [0, 1]}
        }"#;
        let c = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_json(), c.to_json());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = "{\n  \"env\": {\"kind\": \"synthetic\"},\n  \"trainer\": {\"episodez\": 3}\n}";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("episodez"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_line() {
        let text = "{\n  \"env\": {\"kind\": \"synthetic\"},\n  \"sweep\": {\n    \"n_values\": [0, 4]\n  }\n}";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        let text = "{\"env\": {\"kind\": \"wireless\", \"toggle_prob\": 2.0}}";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn sweep_expands_n_outer_seed_inner() {
        let c = ExperimentConfig::parse(
            r#"{"env": {"kind": "synthetic"}, "sweep": {"n_values": [1, 4], "seeds": [7, 8, 9]}}"#,
        )
        .unwrap();
        let runs = c.runs().unwrap();
        let keys: Vec<(usize, u64)> = runs.iter().map(|r| (r.n, r.seed)).collect();
        assert_eq!(keys, vec![(1, 7), (1, 8), (1, 9), (4, 7), (4, 8), (4, 9)]);
        assert!(runs
            .iter()
            .all(|r| r.trainer.n1 == r.n && r.trainer.n2 == r.n));
    }

    #[test]
    fn empty_sweep_is_single_run() {
        let c = ExperimentConfig::parse(
            r#"{"env": {"kind": "synthetic"}, "trainer": {"n1": 5, "n2": 5, "seed": 3}, "sweep": {}}"#,
        )
        .unwrap();
        let runs = c.runs().unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].n, runs[0].seed), (5, 3));
    }
}
