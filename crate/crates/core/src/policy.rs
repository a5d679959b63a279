//! Tabular softmax policy.
//!
//! `θ` is an `|S|×|A|` table stored row-major, so the flat parameter index of
//! `(s, a)` is `s·|A| + a`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, config_err, Error, Result};
use crate::stream::stream;

/// Softmax logits over (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    num_states: usize,
    num_actions: usize,
    theta: Vec<f64>,
}

impl PolicyParams {
    /// Uniform policy (all logits zero).
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            theta: vec![0.0; num_states * num_actions],
        }
    }

    /// Logits drawn i.i.d. from `N(0, std²)` using the auxiliary stream of `seed`.
    pub fn gaussian(num_states: usize, num_actions: usize, std: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| arg_err(format!("gaussian init: {e}")))?;
        let mut rng = stream(seed, u64::MAX);
        let theta = (0..num_states * num_actions)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            theta,
        })
    }

    /// Rebuilds a table from its flat parameter vector.
    pub fn from_flat(num_states: usize, num_actions: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != num_states * num_actions {
            return Err(config_err(format!(
                "parameter vector has {} entries, expected {}x{}",
                theta.len(),
                num_states,
                num_actions
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(arg_err("policy parameters must be finite"));
        }
        Ok(Self {
            num_states,
            num_actions,
            theta,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Parameter dimension `d = |S|·|A|`.
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.theta
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.theta[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.num_actions;
        &mut self.theta[s * n..(s + 1) * n]
    }

    /// Writes `softmax(θ[s,·])` into `out`.
    pub fn probabilities_into(&self, s: usize, out: &mut [f64]) {
        softmax_into(self.row(s), out);
    }

    /// `π(·|s)`.
    pub fn action_probabilities(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions];
        self.probabilities_into(s, &mut out);
        out
    }

    /// `log π(a|s)` via log-sum-exp.
    pub fn log_probability(&self, s: usize, a: usize) -> f64 {
        let row = self.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row[a] - lse
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let mut probs = vec![0.0; self.num_actions];
        self.probabilities_into(s, &mut probs);
        sample_index(&probs, rng)
    }

    /// `∇θ log π(a|s)` as a dense vector: `1{a'=a} − π(a'|s)` on row `s`, zero elsewhere.
    pub fn score(&self, s: usize, a: usize) -> ScoreVector {
        let mut out = vec![0.0; self.dim()];
        let base = s * self.num_actions;
        self.probabilities_into(s, &mut out[base..base + self.num_actions]);
        for v in &mut out[base..base + self.num_actions] {
            *v = -*v;
        }
        out[base + a] += 1.0;
        ScoreVector(out)
    }

    /// Probabilities for every state, computed once for repeated sampling.
    pub fn table(&self) -> ActionTable {
        let mut probs = vec![0.0; self.dim()];
        for s in 0..self.num_states {
            let n = self.num_actions;
            softmax_into(self.row(s), &mut probs[s * n..(s + 1) * n]);
        }
        ActionTable {
            num_actions: self.num_actions,
            probs,
        }
    }

    /// Writes `state,action,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state,action,value")?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                writeln!(w, "{s},{a},{}", self.theta[self.index(s, a)])?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot written by [`write_csv`](Self::write_csv). Missing entries stay zero.
    pub fn read_csv<R: BufRead>(num_states: usize, num_actions: usize, r: R) -> Result<Self> {
        let mut policy = Self::zeros(num_states, num_actions);
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("line {}: expected state,action,value", lineno + 1));
            let mut fields = line.split(',');
            let s: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(bad)?;
            let a: usize = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(bad)?;
            let v: f64 = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(bad)?;
            if s >= num_states || a >= num_actions {
                return Err(Error::Parse(format!(
                    "line {}: ({s},{a}) outside {num_states}x{num_actions}",
                    lineno + 1
                )));
            }
            if !v.is_finite() {
                return Err(Error::Parse(format!(
                    "line {}: non-finite value",
                    lineno + 1
                )));
            }
            let idx = policy.index(s, a);
            policy.theta[idx] = v;
        }
        Ok(policy)
    }
}

/// Precomputed `π(·|s)` for all states.
#[derive(Debug, Clone)]
pub struct ActionTable {
    num_actions: usize,
    probs: Vec<f64>,
}

impl ActionTable {
    pub fn probabilities(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Same draw as [`PolicyParams::sample_action`] for the same generator state.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.probabilities(s), rng)
    }
}

/// `∇θ log π(a|s)` for one `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Inverse-CDF draw from a probability vector using one uniform.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack past the last cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::stream;
    use proptest::prelude::*;

    fn two_action(row: [f64; 2]) -> PolicyParams {
        PolicyParams::from_flat(1, 2, row.to_vec()).unwrap()
    }

    #[test]
    fn uniform_row() {
        let p = two_action([0.0, 0.0]).action_probabilities(0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_row() {
        let p = two_action([1f64.ln(), 3f64.ln()]).action_probabilities(0);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn large_logit_no_overflow() {
        let p = two_action([1000.0, 0.0]).action_probabilities(0);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-300 || p[1] == 0.0);
    }

    #[test]
    fn score_closed_forms() {
        let s = two_action([0.0, 0.0]).score(0, 0);
        assert_eq!(s.0, vec![0.5, -0.5]);
        let s = two_action([1f64.ln(), 3f64.ln()]).score(0, 1);
        assert!((s.0[0] + 0.25).abs() < 1e-12);
        assert!((s.0[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn score_support_is_conditioning_row() {
        let p = PolicyParams::gaussian(3, 4, 1.0, 5).unwrap();
        let sc = p.score(1, 2);
        for (i, v) in sc.0.iter().enumerate() {
            if !(4..8).contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn degenerate_row_always_same_action() {
        let p = PolicyParams::from_flat(1, 3, vec![0.0, 800.0, 0.0]).unwrap();
        let mut rng = stream(1, 0);
        assert!((0..1000).all(|_| p.sample_action(0, &mut rng) == 1));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = PolicyParams::zeros(1, 4);
        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = stream(2, 0);
        for _ in 0..n {
            counts[p.sample_action(0, &mut rng)] += 1;
        }
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.25).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn sampling_reproducible_and_table_consistent() {
        let p = PolicyParams::gaussian(2, 3, 1.0, 9).unwrap();
        let table = p.table();
        let mut a = stream(4, 0);
        let mut b = stream(4, 0);
        for i in 0..200 {
            assert_eq!(p.sample_action(i % 2, &mut a), table.sample(i % 2, &mut b));
        }
    }

    #[test]
    fn csv_snapshot_roundtrip() {
        let p = PolicyParams::gaussian(3, 2, 0.7, 1).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = PolicyParams::read_csv(3, 2, buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_rejects_out_of_range() {
        let text = "state,action,value\n5,0,1.0\n";
        assert!(PolicyParams::read_csv(2, 2, text.as_bytes()).is_err());
    }

    #[test]
    fn from_flat_checks_dimension() {
        assert!(PolicyParams::from_flat(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(v in proptest::collection::vec(-50.0f64..50.0, 6)) {
            let p = PolicyParams::from_flat(2, 3, v.clone()).unwrap();
            prop_assert_eq!(p.into_flat(), v);
        }

        #[test]
        fn probabilities_sum_to_one(v in proptest::collection::vec(-300.0f64..300.0, 5)) {
            let p = PolicyParams::from_flat(1, 5, v).unwrap();
            let probs = p.action_probabilities(0);
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&x| x >= 0.0));
        }
    }
}
