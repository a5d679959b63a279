//! Concave scalarizations `f(J)` of the objective vector and their partials.
//!
//! Inputs below the clamp floor `ε_J` are raised to it before evaluation so
//! that `f` and `∂f/∂J_m` stay finite when an objective receives nothing.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, config_err, Result};

pub const DEFAULT_CLAMP_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityKind {
    /// `f(J) = −Σ_k c / J_k`
    AlphaFairInverse { scale: f64 },
    /// `f(J) = Σ_k log(J_k / c)`
    SumLog { scale: f64 },
    /// `f(J) = Σ_k w_k J_k`; never clamped.
    WeightedSum { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    pub clamp_floor: f64,
}

impl UtilitySpec {
    pub fn alpha_fair_inverse(scale: f64) -> Self {
        Self::with_kind(UtilityKind::AlphaFairInverse { scale })
    }

    pub fn sum_log(scale: f64) -> Self {
        Self::with_kind(UtilityKind::SumLog { scale })
    }

    pub fn weighted_sum(weights: Vec<f64>) -> Self {
        Self::with_kind(UtilityKind::WeightedSum { weights })
    }

    pub fn with_kind(kind: UtilityKind) -> Self {
        Self {
            kind,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        }
    }

    pub fn with_clamp_floor(mut self, floor: f64) -> Self {
        self.clamp_floor = floor;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            UtilityKind::AlphaFairInverse { .. } => "alpha_fair_inverse",
            UtilityKind::SumLog { .. } => "sum_log",
            UtilityKind::WeightedSum { .. } => "weighted_sum",
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, UtilityKind::WeightedSum { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            UtilityKind::AlphaFairInverse { scale } | UtilityKind::SumLog { scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(config_err("utility scale must be finite and > 0"));
                }
            }
            UtilityKind::WeightedSum { weights } => {
                if weights.iter().any(|w| !w.is_finite()) {
                    return Err(config_err("utility weights must be finite"));
                }
            }
        }
        if !(self.clamp_floor > 0.0 && self.clamp_floor.is_finite()) {
            return Err(config_err("clamp_floor must be finite and > 0"));
        }
        Ok(())
    }

    fn check(&self, j: &[f64]) -> Result<()> {
        if let Some((m, v)) = j.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
            return Err(arg_err(format!(
                "objective {m} is {v}; utilities need J >= 0"
            )));
        }
        if let UtilityKind::WeightedSum { weights } = &self.kind {
            if weights.len() != j.len() {
                return Err(config_err(format!(
                    "{} weights for {} objectives",
                    weights.len(),
                    j.len()
                )));
            }
        }
        Ok(())
    }

    /// True when evaluating at `j` would raise some component to the floor.
    pub fn clamps(&self, j: &[f64]) -> bool {
        !self.is_linear() && j.iter().any(|&v| v < self.clamp_floor)
    }

    pub fn value(&self, j: &[f64]) -> Result<f64> {
        self.check(j)?;
        let floor = self.clamp_floor;
        Ok(match &self.kind {
            UtilityKind::AlphaFairInverse { scale } => {
                -j.iter().map(|&v| scale / v.max(floor)).sum::<f64>()
            }
            UtilityKind::SumLog { scale } => j.iter().map(|&v| (v.max(floor) / scale).ln()).sum(),
            UtilityKind::WeightedSum { weights } => weights.iter().zip(j).map(|(w, v)| w * v).sum(),
        })
    }

    /// `∂f/∂J_m` for every `m`.
    pub fn partials(&self, j: &[f64]) -> Result<Vec<f64>> {
        self.check(j)?;
        let floor = self.clamp_floor;
        Ok(match &self.kind {
            UtilityKind::AlphaFairInverse { scale } => j
                .iter()
                .map(|&v| {
                    let v = v.max(floor);
                    scale / (v * v)
                })
                .collect(),
            UtilityKind::SumLog { .. } => j.iter().map(|&v| 1.0 / v.max(floor)).collect(),
            UtilityKind::WeightedSum { weights } => weights.clone(),
        })
    }

    /// Bound `C` on `|∂f/∂J_m|` over `[δ, ∞)^M`, with `δ` raised to the clamp floor.
    pub fn partial_bound(&self, delta: f64) -> f64 {
        let d = delta.max(self.clamp_floor);
        match &self.kind {
            UtilityKind::AlphaFairInverse { scale } => scale / (d * d),
            UtilityKind::SumLog { .. } => 1.0 / d,
            UtilityKind::WeightedSum { weights } => weights.iter().fold(0.0, |a, w| a.max(w.abs())),
        }
    }

    /// Lipschitz constant `L_f` of each partial over `[δ, ∞)^M` in the 2-norm.
    ///
    /// Partials are separable, so the constant is the sup of `|∂²f/∂J_m²|`:
    /// `2c/δ³` for the inverse utility, `1/δ²` for sum-log, `0` for weighted sums.
    pub fn partials_lipschitz(&self, delta: f64) -> f64 {
        let d = delta.max(self.clamp_floor);
        match &self.kind {
            UtilityKind::AlphaFairInverse { scale } => 2.0 * scale / (d * d * d),
            UtilityKind::SumLog { .. } => 1.0 / (d * d),
            UtilityKind::WeightedSum { .. } => 0.0,
        }
    }
}
