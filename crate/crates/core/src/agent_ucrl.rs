//! Optimistic Q-learning over a finite action set with nearest-neighbor
//! value approximation.
//!
//! Per step `h` (0-based) the agent keeps one label per buffer point and
//! evaluates `Q_h(q) = min(H - h, min_i {label_h,i + L d(q, x_i)})`, which is
//! `H` everywhere while the buffer is empty. After each episode the labels are
//! rebuilt backward from the last step:
//! `label_{H-1} = min(r, 1)` and `label_h = r + max_a Q_{h+1}(f(x), a)`, each
//! clipped to `[0, H - h]`.

use std::collections::HashSet;
use std::io::Write;

use crate::envs::{Action, DeterministicMdp};
use crate::error::AgentError;
use crate::metric_space::{MetricSpec, Point};
use crate::nn_index::{LabelField, NNIndex, TransitionRecord};

/// Largest successor-distance cache, in f64 entries, kept during a refresh.
const OFFSET_CACHE_ENTRIES: usize = 1 << 23;

#[derive(Debug, Clone, PartialEq)]
pub struct UcrlConfig {
    /// Lipschitz coefficient of the confidence bonus.
    pub lipschitz: f64,
    /// Metric over `(observation, action coordinates)`.
    pub metric: MetricSpec,
    /// Label only the newly added points each episode and keep the old labels
    /// (still valid upper bounds, just looser). A full rebuild then happens
    /// every `full_refresh_every` episodes (0: never).
    pub incremental: bool,
    pub full_refresh_every: usize,
}

/// One executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct UcrlFaAgent {
    cfg: UcrlConfig,
    horizon: usize,
    action_coords: Vec<Vec<f64>>,
    index: NNIndex,
    /// `fields[h]` labels every buffer point for step `h`.
    fields: Vec<LabelField>,
    seen: HashSet<Vec<u64>>,
    episodes: usize,
}

impl UcrlFaAgent {
    pub fn new<E: DeterministicMdp>(env: &E, cfg: UcrlConfig) -> Result<Self, AgentError> {
        let n = env
            .action_space()
            .n_discrete()
            .ok_or_else(|| AgentError::Config("UCRL-FA needs a finite action set".into()))?;
        if !(cfg.lipschitz >= 0.0 && cfg.lipschitz.is_finite()) {
            return Err(AgentError::Config(format!("bad lipschitz {}", cfg.lipschitz)));
        }
        let action_coords: Vec<Vec<f64>> =
            (0..n).map(|a| env.action_coords(&Action::Discrete(a))).collect();
        let dim = env.obs_dim() + action_coords[0].len();
        if cfg.metric.dim() != dim {
            return Err(AgentError::Config(format!(
                "metric has {} weights, state-action points have {dim} coordinates",
                cfg.metric.dim()
            )));
        }
        let index = NNIndex::new(cfg.metric.clone());
        let fields = (0..env.horizon())
            .map(|_| index.label_field(Vec::new()))
            .collect::<Result<_, _>>()?;
        Ok(UcrlFaAgent {
            cfg,
            horizon: env.horizon(),
            action_coords,
            index,
            fields,
            seen: HashSet::new(),
            episodes: 0,
        })
    }

    pub fn index(&self) -> &NNIndex {
        &self.index
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_actions(&self) -> usize {
        self.action_coords.len()
    }

    /// Labels for step `h`, indexed by buffer insert index.
    pub fn labels(&self, h: usize) -> &[f64] {
        self.fields[h].labels()
    }

    fn point(&self, obs: &[f64], a: usize) -> Vec<f64> {
        let mut x = obs.to_vec();
        x.extend_from_slice(&self.action_coords[a]);
        x
    }

    fn cap(&self, h: usize) -> f64 {
        (self.horizon - h) as f64
    }

    /// Optimistic `Q_h(obs, a)`.
    pub fn q_hat(&self, h: usize, obs: &[f64], a: usize) -> Result<f64, AgentError> {
        let x = self.point(obs, a);
        if self.index.is_empty() {
            return Ok(self.horizon as f64);
        }
        Ok(self
            .index
            .min_plus(&self.fields[h], &x, self.cfg.lipschitz, self.cap(h))?)
    }

    /// `max_a Q_h(obs, a)`.
    pub fn greedy_value(&self, h: usize, obs: &[f64]) -> Result<f64, AgentError> {
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.n_actions() {
            best = best.max(self.q_hat(h, obs, a)?);
        }
        Ok(best)
    }

    /// Greedy action, lowest index among ties.
    pub fn act(&self, obs: &[f64], h: usize) -> Result<usize, AgentError> {
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..self.n_actions() {
            let q = self.q_hat(h, obs, a)?;
            if q > best.0 {
                best = (q, a);
            }
        }
        Ok(best.1)
    }

    /// Greedy action with the gap to the runner-up value.
    pub fn act_with_margin(&self, obs: &[f64], h: usize) -> Result<(usize, f64), AgentError> {
        let qs = (0..self.n_actions())
            .map(|a| self.q_hat(h, obs, a))
            .collect::<Result<Vec<_>, _>>()?;
        let best = self.act(obs, h)?;
        let runner = qs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != best)
            .map(|(_, q)| *q)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((best, qs[best] - runner))
    }

    /// Append the trajectory to the buffer and refresh the labels.
    pub fn end_episode_update(&mut self, trajectory: &[StepRecord]) -> Result<(), AgentError> {
        let first_new = self.index.len();
        for (h, st) in trajectory.iter().enumerate() {
            if !(0.0..=1.0).contains(&st.reward) {
                return Err(AgentError::RewardRange(st.reward));
            }
            let x = self.point(&st.obs, st.action);
            // A deterministic MDP maps a repeated point to the same successor
            // and reward, so duplicates carry no information.
            if !self.seen.insert(x.iter().map(|c| c.to_bits()).collect()) {
                continue;
            }
            let rec = TransitionRecord {
                state: st.obs.clone(),
                action: self.action_coords[st.action].clone(),
                action_index: Some(st.action),
                next_state: st.next_obs.clone(),
                reward: st.reward,
                step: h,
                terminal: st.terminal,
                stored_delta: None,
            };
            self.index.insert(Point::new(x)?, st.reward, rec)?;
        }
        self.episodes += 1;
        let full = !self.cfg.incremental
            || (self.cfg.full_refresh_every > 0 && self.episodes % self.cfg.full_refresh_every == 0);
        self.refresh(if full { 0 } else { first_new })
    }

    /// Recompute labels of buffer points `from..` for every step, backward.
    fn refresh(&mut self, from: usize) -> Result<(), AgentError> {
        let n = self.index.len();
        let n_actions = self.action_coords.len();
        // Successor queries repeat at every step with new labels only, so
        // their distances are computed once when the cache is small enough.
        let cached = (n - from) * n_actions * n <= OFFSET_CACHE_ENTRIES;
        let mut offsets: Vec<Vec<Vec<f64>>> = Vec::new();
        if cached {
            for i in from..n {
                let rec = &self.index.sample(i)?.payload;
                let mut per_action = Vec::new();
                if !rec.terminal {
                    for a in 0..n_actions {
                        let x = self.point(&rec.next_state, a);
                        per_action.push(self.index.min_plus_offsets(&x, self.cfg.lipschitz)?);
                    }
                }
                offsets.push(per_action);
            }
        }
        for h in (0..self.horizon).rev() {
            let mut labels = self.fields[h].labels().to_vec();
            labels.resize(n, self.cap(h));
            for (i, label) in labels.iter_mut().enumerate().skip(from) {
                let rec = &self.index.sample(i)?.payload;
                let v = if h + 1 == self.horizon {
                    rec.reward.min(1.0)
                } else if rec.terminal {
                    rec.reward
                } else {
                    let next = &self.fields[h + 1];
                    let cap = self.cap(h + 1);
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..n_actions {
                        let q = if cached {
                            next.labels()
                                .iter()
                                .zip(&offsets[i - from][a])
                                .map(|(l, o)| l + o)
                                .fold(cap, f64::min)
                        } else {
                            let x = self.point(&rec.next_state, a);
                            self.index.min_plus(next, &x, self.cfg.lipschitz, cap)?
                        };
                        best = best.max(q);
                    }
                    rec.reward + best
                };
                *label = v.clamp(0.0, self.cap(h));
            }
            self.fields[h] = self.index.label_field(labels)?;
        }
        Ok(())
    }

    /// Play one greedy episode from `reset(seed)`; the update is not applied.
    pub fn rollout<E: DeterministicMdp>(&self, env: &E, seed: u64) -> Result<Vec<StepRecord>, AgentError> {
        let mut s = env.reset(seed);
        let mut out = Vec::with_capacity(self.horizon);
        for h in 0..self.horizon {
            let obs = env.observe(&s);
            let a = self.act(&obs, h)?;
            let t = env.step(&s, &Action::Discrete(a))?;
            out.push(StepRecord {
                obs,
                action: a,
                reward: t.reward,
                next_obs: env.observe(&t.next),
                terminal: t.done,
            });
            s = t.next;
            if t.done {
                break;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub episode: usize,
    pub episode_return: f64,
    /// Optimal value from the episode's start state, if an oracle exists.
    pub v_star: Option<f64>,
    pub cumulative_regret: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
}

impl RegretLedger {
    pub fn push(&mut self, episode_return: f64, v_star: Option<f64>) {
        let prev = self.rows.last().and_then(|r| r.cumulative_regret).unwrap_or(0.0);
        self.rows.push(LedgerRow {
            episode: self.rows.len() + 1,
            episode_return,
            v_star,
            cumulative_regret: v_star.map(|v| prev + (v - episode_return)),
        });
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.cumulative_regret).collect()
    }

    pub fn per_episode_regret(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.v_star.map(|v| v - r.episode_return))
            .collect()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.cumulative_regret)
    }

    /// `episode,return,v_star,cumulative_regret` with empty cells when no
    /// oracle value exists.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "episode,return,v_star,cumulative_regret")?;
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            writeln!(
                w,
                "{},{},{},{}",
                r.episode,
                r.episode_return,
                opt(r.v_star),
                opt(r.cumulative_regret)
            )?;
        }
        w.flush()
    }

    /// Inverse of [`RegretLedger::write_csv`].
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, csv::Error> {
        let rows = csv::Reader::from_reader(r)
            .deserialize::<(usize, f64, Option<f64>, Option<f64>)>()
            .map(|row| {
                row.map(|(episode, episode_return, v_star, cumulative_regret)| LedgerRow {
                    episode,
                    episode_return,
                    v_star,
                    cumulative_regret,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(RegretLedger { rows })
    }
}

/// Run `episodes` episodes, episode `k` starting from `reset(seed_of(k))`.
/// `oracle` maps a start state to its optimal value.
pub fn run<E, S, O>(
    agent: &mut UcrlFaAgent,
    env: &E,
    episodes: usize,
    mut seed_of: S,
    oracle: Option<O>,
) -> Result<RegretLedger, AgentError>
where
    E: DeterministicMdp,
    S: FnMut(usize) -> u64,
    O: Fn(&E::State) -> f64,
{
    let mut ledger = RegretLedger::default();
    for k in 0..episodes {
        let seed = seed_of(k);
        let start = env.reset(seed);
        let traj = agent.rollout(env, seed)?;
        let ret: f64 = traj.iter().map(|s| s.reward).sum();
        agent.end_episode_update(&traj)?;
        ledger.push(ret, oracle.as_ref().map(|o| o(&start)));
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::LipschitzChain;

    fn agent(h: usize) -> (LipschitzChain, UcrlFaAgent) {
        let env = LipschitzChain {
            horizon: h,
            ..Default::default()
        };
        let cfg = UcrlConfig {
            lipschitz: env.declared_l1(1.0, 1.0),
            metric: MetricSpec::euclidean(2),
            incremental: false,
            full_refresh_every: 0,
        };
        let a = UcrlFaAgent::new(&env, cfg).unwrap();
        (env, a)
    }

    fn step(obs: f64, action: usize, reward: f64, next: f64) -> StepRecord {
        StepRecord {
            obs: vec![obs],
            action,
            reward,
            next_obs: vec![next],
            terminal: false,
        }
    }

    #[test]
    fn empty_buffer_ties_to_action_zero() {
        let (_, a) = agent(5);
        assert_eq!(a.act(&[0.4], 0).unwrap(), 0);
        assert_eq!(a.q_hat(3, &[0.4], 2).unwrap(), 5.0);
    }

    #[test]
    fn single_terminal_label() {
        let (_, mut a) = agent(1);
        a.end_episode_update(&[step(0.5, 1, 1.0, 0.5)]).unwrap();
        assert_eq!(a.labels(0), &[1.0]);
    }

    #[test]
    fn two_step_hand_recursion() {
        let (_, mut a) = agent(2);
        a.end_episode_update(&[step(0.2, 1, 1.0, 0.2), step(0.2, 2, 1.0, 0.3)])
            .unwrap();
        // The successor of the first point is the second point's state, so
        // the step-1 labels at distance 0 (and capped at 1 elsewhere) give 2.
        assert_eq!(a.labels(0)[0], 2.0);
        assert_eq!(a.labels(1), &[1.0, 1.0]);
    }

    #[test]
    fn unvisited_action_stays_optimistic() {
        let (_, mut a) = agent(5);
        a.end_episode_update(&[step(0.5, 1, 0.2, 0.5)]).unwrap();
        // Action 0 at 0.5 is 0.1 away in the action coordinate.
        let q0 = a.q_hat(4, &[0.5], 0).unwrap();
        let q1 = a.q_hat(4, &[0.5], 1).unwrap();
        assert!(q0 > q1);
    }

    #[test]
    fn rejects_out_of_range_reward() {
        let (_, mut a) = agent(2);
        assert!(matches!(
            a.end_episode_update(&[step(0.5, 1, 1.5, 0.5)]),
            Err(AgentError::RewardRange(_))
        ));
    }

    #[test]
    fn ledger_accumulates() {
        let mut l = RegretLedger::default();
        l.push(1.0, Some(3.0));
        l.push(2.0, Some(2.5));
        assert_eq!(l.cumulative(), vec![2.0, 2.5]);
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "episode,return,v_star,cumulative_regret\n1,1,3,2\n2,2,2.5,2.5\n"
        );
    }
}
