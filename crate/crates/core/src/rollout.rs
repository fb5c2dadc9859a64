//! The nearest-neighbor rollout critic.
//!
//! `V(s, h)` follows the policy's action at `s`, jumps to the `M` nearest
//! stored transitions, and recurses on their recorded successors:
//! `V(s, h) = min_i { r_i + gamma V(s'_i, h + 1) + L d((s, a), (s_i, a_i)) }`
//! with `V = 0` once `h` reaches the limit. The Lipschitz bonus makes each
//! branch an upper bound on what the policy can collect from `s`.

use std::collections::HashMap;

use crate::nn_index::{IndexError, NNIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    /// Neighbors expanded per level.
    pub m: usize,
    pub lipschitz: f64,
    pub gamma: f64,
    /// Value per remaining step returned when the buffer is empty.
    pub empty_step_value: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            m: 1,
            lipschitz: 7.0,
            gamma: 0.99,
            empty_step_value: 1.0,
        }
    }
}

/// Counts NN lookups, for checking the per-query cost.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RolloutStats {
    pub lookups: usize,
    pub max_depth: usize,
}

/// Recursive value estimate at observation `obs`, step `h`, with recursion
/// stopping at `limit`. `policy` maps an observation to the action
/// coordinates appended to it for the search.
pub fn nn_func_approx<P>(
    index: &NNIndex,
    obs: &[f64],
    h: usize,
    limit: usize,
    policy: &mut P,
    cfg: &RolloutConfig,
) -> Result<f64, IndexError>
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let mut stats = RolloutStats::default();
    nn_func_approx_stats(index, obs, h, limit, policy, cfg, &mut stats)
}

pub fn nn_func_approx_stats<P>(
    index: &NNIndex,
    obs: &[f64],
    h: usize,
    limit: usize,
    policy: &mut P,
    cfg: &RolloutConfig,
    stats: &mut RolloutStats,
) -> Result<f64, IndexError>
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    if h >= limit {
        return Ok(0.0);
    }
    if index.is_empty() {
        return Ok(cfg.empty_step_value * (limit - h) as f64);
    }
    if cfg.m == 1 {
        return single_path(index, obs, limit - h, policy, cfg, stats);
    }
    let mut memo = HashMap::new();
    branch(index, obs, limit - h, policy, cfg, stats, &mut memo, 1)
}

fn key(index: &NNIndex, obs: &[f64], policy_action: Vec<f64>) -> Result<Vec<f64>, IndexError> {
    let mut x = obs.to_vec();
    x.extend(policy_action);
    if x.len() != index.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: index.dim(),
            got: x.len(),
        });
    }
    Ok(x)
}

/// `M = 1`: the recursion is a single chain, evaluated iteratively
/// back-to-front so that the sum is formed exactly as the recursion would.
fn single_path<P>(
    index: &NNIndex,
    obs: &[f64],
    remaining: usize,
    policy: &mut P,
    cfg: &RolloutConfig,
    stats: &mut RolloutStats,
) -> Result<f64, IndexError>
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(remaining);
    let mut cur = obs.to_vec();
    for depth in 0..remaining {
        let x = key(index, &cur, policy(&cur))?;
        let (id, d) = index.nearest_one(&x)?;
        stats.lookups += 1;
        stats.max_depth = stats.max_depth.max(depth + 1);
        let rec = &index.sample(id)?.payload;
        terms.push((rec.reward, cfg.lipschitz * d));
        if rec.terminal {
            break;
        }
        cur.clone_from(&rec.next_state);
    }
    let mut v = 0.0;
    for (r, bonus) in terms.into_iter().rev() {
        v = r + cfg.gamma * v + bonus;
    }
    Ok(v)
}

/// Coordinates rounded to 1e-9 plus the remaining depth.
type MemoKey = (Vec<i64>, usize);

#[allow(clippy::too_many_arguments)]
fn branch<P>(
    index: &NNIndex,
    obs: &[f64],
    remaining: usize,
    policy: &mut P,
    cfg: &RolloutConfig,
    stats: &mut RolloutStats,
    memo: &mut HashMap<MemoKey, f64>,
    depth: usize,
) -> Result<f64, IndexError>
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    if remaining == 0 {
        return Ok(0.0);
    }
    let mk: MemoKey = (obs.iter().map(|c| (c * 1e9).round() as i64).collect(), remaining);
    if let Some(v) = memo.get(&mk) {
        return Ok(*v);
    }
    let x = key(index, obs, policy(obs))?;
    let hits = index.nearest(&x, cfg.m)?.hits;
    stats.lookups += 1;
    stats.max_depth = stats.max_depth.max(depth);
    let mut best = f64::INFINITY;
    for (id, d) in hits {
        let rec = &index.sample(id)?.payload;
        let next = if rec.terminal {
            0.0
        } else {
            let s_next = rec.next_state.clone();
            branch(index, &s_next, remaining - 1, policy, cfg, stats, memo, depth + 1)?
        };
        best = best.min(rec.reward + cfg.gamma * next + cfg.lipschitz * d);
    }
    memo.insert(mk, best);
    Ok(best)
}

/// `delta = r + gamma V(s', h + 1) - V(s, h)`, with both estimates planning
/// `planning_horizon` steps ahead (capped by the episode horizon) and
/// `V(s') = 0` when the successor is terminal.
#[allow(clippy::too_many_arguments)]
pub fn td_error<P>(
    index: &NNIndex,
    obs: &[f64],
    reward: f64,
    next_obs: &[f64],
    terminal: bool,
    h: usize,
    horizon: usize,
    planning_horizon: usize,
    policy: &mut P,
    cfg: &RolloutConfig,
) -> Result<f64, IndexError>
where
    P: FnMut(&[f64]) -> Vec<f64>,
{
    let v_s = nn_func_approx(index, obs, h, horizon.min(h + planning_horizon), policy, cfg)?;
    let v_next = if terminal {
        0.0
    } else {
        nn_func_approx(
            index,
            next_obs,
            h + 1,
            horizon.min(h + planning_horizon),
            policy,
            cfg,
        )?
    };
    Ok(reward + cfg.gamma * v_next - v_s)
}
