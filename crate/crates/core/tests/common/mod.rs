//! Oracles written independently of the library's DP and sampling code.
#![allow(dead_code)]

use jointpg::envs::TabularModel;
use jointpg::mdp::Trajectory;
use jointpg::policy::PolicyParams;

/// Softmax of one row, computed directly from the definition.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Every length-`h` path with its probability, as a trajectory of expected rewards.
pub fn enumerate_paths(
    model: &TabularModel,
    policy: &PolicyParams,
    h: usize,
) -> Vec<(f64, Trajectory)> {
    let (ns, na, nm) = (
        model.num_states(),
        model.num_actions(),
        model.num_objectives(),
    );
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| softmax(policy.row(s))).collect();
    let mut out = Vec::new();
    for s in 0..ns {
        if model.initial()[s] > 0.0 {
            extend(
                model,
                &pi,
                h,
                model.initial()[s],
                vec![],
                s,
                &mut out,
                na,
                nm,
            );
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn extend(
    model: &TabularModel,
    pi: &[Vec<f64>],
    h: usize,
    p: f64,
    path: Vec<(usize, usize)>,
    s: usize,
    out: &mut Vec<(f64, Trajectory)>,
    na: usize,
    nm: usize,
) {
    for a in 0..na {
        let pa = p * pi[s][a];
        if pa == 0.0 {
            continue;
        }
        let mut next_path = path.clone();
        next_path.push((s, a));
        if next_path.len() == h {
            let mut traj = Trajectory::with_capacity(h, nm);
            for &(st, at) in &next_path {
                traj.push(st, at, model.reward(st, at));
            }
            out.push((pa, traj));
            continue;
        }
        for s2 in 0..model.num_states() {
            let q = model.transition(s, a, s2);
            if q > 0.0 {
                extend(model, pi, h, pa * q, next_path.clone(), s2, out, na, nm);
            }
        }
    }
}

/// `J_{m,H}` as the probability-weighted sum of discounted path returns.
pub fn enumerated_returns(
    model: &TabularModel,
    policy: &PolicyParams,
    gamma: f64,
    h: usize,
) -> Vec<f64> {
    let nm = model.num_objectives();
    let mut j = vec![0.0; nm];
    for (p, traj) in enumerate_paths(model, policy, h) {
        let mut discount = 1.0;
        for t in 0..traj.len() {
            for m in 0..nm {
                j[m] += p * discount * traj.rewards(t)[m];
            }
            discount *= gamma;
        }
    }
    j
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
