//! Random-walk exploration over integer embedding sizes.
//!
//! From the rounded actor proposal, a short walk hops between sizes within
//! distance `t`, with hop probability proportional to the hop distance. The
//! visited sizes and the start form the candidate set, and the side's first
//! critic picks among them.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::rng::Rng;
use crate::td3::{normalize_action, SearchState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    /// Largest size change per hop.
    pub threshold: usize,
    pub walk_length: usize,
    pub d_max: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            threshold: 5,
            walk_length: 5,
            d_max: 128,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 || self.walk_length < 1 || self.d_max < 1 {
            return Err(Error::Invalid(format!(
                "walk needs threshold >= 1, walk_length >= 1, d_max >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Sizes reachable in one hop from `d`, ascending.
pub fn neighbor_set(d: usize, cfg: &WalkConfig) -> Vec<usize> {
    let lo = d.saturating_sub(cfg.threshold).max(1);
    let hi = (d + cfg.threshold).min(cfg.d_max);
    (lo..=hi).filter(|&x| x != d).collect()
}

/// One-hop probabilities `|d' - d| / Σ |d'' - d|` over [`neighbor_set`].
pub fn step_distribution(d: usize, cfg: &WalkConfig) -> Result<Vec<(usize, f64)>> {
    let nbrs = neighbor_set(d, cfg);
    if nbrs.is_empty() {
        return Err(Error::Sampling(format!(
            "size {d} has no neighbours with d_max = {}",
            cfg.d_max
        )));
    }
    let total: usize = nbrs.iter().map(|&x| x.abs_diff(d)).sum();
    Ok(nbrs
        .into_iter()
        .map(|x| (x, x.abs_diff(d) as f64 / total as f64))
        .collect())
}

/// Nearest integer (half away from zero), clipped to `[1, d_max]`.
pub fn round_action(d_hat: f64, d_max: usize) -> usize {
    (d_hat.round().max(1.0) as usize).min(d_max)
}

/// Draws one hop from `d`.
pub fn step(d: usize, cfg: &WalkConfig, rng: &mut Rng) -> Result<usize> {
    let nbrs = neighbor_set(d, cfg);
    let weights: Vec<usize> = nbrs.iter().map(|&x| x.abs_diff(d)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| {
        Error::Sampling(format!("size {d} with d_max = {}: {e}", cfg.d_max))
    })?;
    Ok(nbrs[dist.sample(rng)])
}

/// Candidate set `Z`: the rounded start followed by `walk_length` visited
/// sizes (revisits kept).
pub fn random_walk(d_hat: f64, cfg: &WalkConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut cur = round_action(d_hat, cfg.d_max);
    let mut z = Vec::with_capacity(cfg.walk_length + 1);
    z.push(cur);
    for _ in 0..cfg.walk_length {
        cur = step(cur, cfg, rng)?;
        z.push(cur);
    }
    Ok(z)
}

/// Index of the largest value; ties go to the smaller size.
pub fn argmax_smallest(z: &[usize], values: &[f64]) -> Result<usize> {
    if z.is_empty() || z.len() != values.len() {
        return Err(Error::Invalid(format!(
            "{} candidates with {} values",
            z.len(),
            values.len()
        )));
    }
    let mut best = 0;
    for i in 1..z.len() {
        let better = values[i] > values[best] || (values[i] == values[best] && z[i] < z[best]);
        if better {
            best = i;
        }
    }
    Ok(z[best])
}

/// Critic-greedy pick from `z` at `state`.
pub fn select_action(critic: &DenseNet, state: &SearchState, z: &[usize], d_max: usize) -> Result<usize> {
    let rows = z.len();
    let mut input = Array2::zeros((rows, 4));
    for (i, &d) in z.iter().enumerate() {
        let s = state.to_array();
        input.row_mut(i).assign(&ndarray::arr1(&[s[0], s[1], s[2], normalize_action(d as f64, d_max)]));
    }
    let q = critic.predict(input.view())?;
    argmax_smallest(z, q.as_slice().expect("contiguous critic output"))
}

/// [`select_action`] for many entities with one critic pass.
pub fn select_actions(
    critic: &DenseNet,
    states: &[SearchState],
    candidates: &[Vec<usize>],
    d_max: usize,
) -> Result<Vec<usize>> {
    let rows: usize = candidates.iter().map(Vec::len).sum();
    let mut input = Array2::zeros((rows, 4));
    let mut r = 0;
    for (state, z) in states.iter().zip(candidates) {
        let s = state.to_array();
        for &d in z {
            input[[r, 0]] = s[0];
            input[[r, 1]] = s[1];
            input[[r, 2]] = s[2];
            input[[r, 3]] = normalize_action(d as f64, d_max);
            r += 1;
        }
    }
    let q = critic.predict(input.view())?;
    let q = q.as_slice().expect("contiguous critic output");
    let mut out = Vec::with_capacity(candidates.len());
    let mut r = 0;
    for z in candidates {
        out.push(argmax_smallest(z, &q[r..r + z.len()])?);
        r += z.len();
    }
    Ok(out)
}
