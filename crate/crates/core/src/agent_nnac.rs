//! Actor-critic with a nearest-neighbor rollout critic over a finite action
//! set.
//!
//! Each environment step computes the TD error
//! `delta = r + gamma V(s') - V(s)` from the rollout critic of
//! [`crate::rollout`] against the buffer as it stood before the step, stores
//! the transition with its `delta`, and takes one Adam ascent step on
//! `N^-1 sum_i delta_i grad log pi(a_i | s_i)` over a uniform minibatch.

use rand::seq::index::sample as sample_indices;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Action, DeterministicMdp};
use crate::error::AgentError;
pub use crate::eval::eval_seed;
use crate::eval::{evaluate, EpisodeRecord, EvalPoint, LearningCurve};
use crate::metric_space::{MetricSpec, Point};
use crate::neural::{AdamState, Mlp, RowShared};
use crate::nn_index::{NNIndex, TransitionRecord};
use crate::rollout::{self, RolloutConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct NnacConfig {
    /// Neighbors per rollout level.
    pub m: usize,
    pub lipschitz: f64,
    pub gamma: f64,
    pub planning_horizon: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub init_bound: f64,
    /// Squash logits with tanh before the softmax.
    pub tanh_logits: bool,
    /// Negative TD errors are multiplied by this before the actor update.
    pub neg_delta_scale: f64,
    /// L2 norm cap of the averaged policy gradient.
    pub grad_clip: f64,
    /// Metric weight of every observation coordinate.
    pub state_weight: f64,
    /// Metric weight of every action coordinate.
    pub action_weight: f64,
    /// Critic value per remaining step on an empty buffer.
    pub empty_step_value: f64,
    /// Start with zero input-layer weights.
    pub zero_input_layer: bool,
    /// Row-shared Adam second moments on the input layer.
    pub row_shared_adam: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for NnacConfig {
    fn default() -> Self {
        NnacConfig {
            m: 1,
            lipschitz: 7.0,
            gamma: 0.99,
            planning_horizon: 12,
            batch_size: 32,
            lr: 5e-4,
            hidden: 32,
            init_bound: 3e-3,
            tanh_logits: true,
            neg_delta_scale: 1.0,
            grad_clip: 10.0,
            state_weight: 0.25,
            action_weight: 1.0,
            empty_step_value: 1.0,
            zero_input_layer: false,
            row_shared_adam: false,
            eval_every: 1000,
            eval_episodes: 5,
            seed: 1,
        }
    }
}

impl NnacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.m < 1 {
            return bad("m must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.planning_horizon < 1 {
            return bad("planning_horizon must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.eval_episodes < 1 {
            return bad("eval_episodes must be >= 1");
        }
        Ok(())
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            m: self.m,
            lipschitz: self.lipschitz,
            gamma: self.gamma,
            empty_step_value: self.empty_step_value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NnacAgent {
    cfg: NnacConfig,
    policy: Mlp,
    adam: AdamState,
    index: NNIndex,
    rng: ChaCha8Rng,
    action_coords: Vec<Vec<f64>>,
    horizon: usize,
    /// Every behavior action taken, in order.
    pub action_log: Vec<usize>,
}

impl NnacAgent {
    pub fn new<E: DeterministicMdp>(env: &E, cfg: NnacConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let n = env
            .action_space()
            .n_discrete()
            .ok_or_else(|| AgentError::Config("NNAC needs a finite action set".into()))?;
        let action_coords: Vec<Vec<f64>> =
            (0..n).map(|a| env.action_coords(&Action::Discrete(a))).collect();
        let metric = MetricSpec::state_action(
            env.obs_dim(),
            cfg.state_weight,
            action_coords[0].len(),
            cfg.action_weight,
        )?;
        let mut policy = Mlp::policy(env.obs_dim(), n, cfg.hidden, cfg.tanh_logits);
        policy.init_uniform(cfg.init_bound, cfg.seed);
        if cfg.zero_input_layer {
            policy.zero_weights(0);
        }
        let mut adam = AdamState::new(policy.n_params(), cfg.lr);
        if cfg.row_shared_adam {
            adam = adam.with_row_shared(RowShared { layer: 0 });
        }
        Ok(NnacAgent {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a11c),
            cfg,
            policy,
            adam,
            index: NNIndex::new(metric),
            action_coords,
            horizon: env.horizon(),
            action_log: Vec::new(),
        })
    }

    pub fn config(&self) -> &NnacConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn index(&self) -> &NNIndex {
        &self.index
    }

    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize, AgentError> {
        Ok(self.policy.mode(obs)?)
    }

    /// Critic estimate `V(obs)` at step `h`, planning `H'` steps ahead.
    pub fn value(&self, obs: &[f64], h: usize) -> Result<f64, AgentError> {
        let limit = self.horizon.min(h + self.cfg.planning_horizon);
        let mut pol = self.mode_policy();
        Ok(rollout::nn_func_approx(&self.index, obs, h, limit, &mut pol, &self.cfg.rollout())?)
    }

    fn mode_policy(&self) -> impl FnMut(&[f64]) -> Vec<f64> + '_ {
        move |o: &[f64]| {
            let a = self.policy.mode(o).unwrap_or(0);
            self.action_coords[a].clone()
        }
    }

    pub fn td_error(
        &self,
        obs: &[f64],
        reward: f64,
        next_obs: &[f64],
        terminal: bool,
        h: usize,
    ) -> Result<f64, AgentError> {
        let mut pol = self.mode_policy();
        Ok(rollout::td_error(
            &self.index,
            obs,
            reward,
            next_obs,
            terminal,
            h,
            self.horizon,
            self.cfg.planning_horizon,
            &mut pol,
            &self.cfg.rollout(),
        )?)
    }

    /// Append a transition with its TD error.
    pub fn store(&mut self, rec: TransitionRecord) -> Result<usize, AgentError> {
        let x = Point::new(rec.key())?;
        Ok(self.index.insert(x, rec.reward, rec)?)
    }

    /// Averaged, negative-scaled and norm-clipped score-function gradient
    /// over buffer samples `ids` (ascent direction).
    pub fn policy_gradient(&self, ids: &[usize]) -> Result<Vec<f64>, AgentError> {
        let mut g = vec![0.0; self.policy.n_params()];
        if ids.is_empty() {
            return Ok(g);
        }
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            let rec = &self.index.sample(id)?.payload;
            let delta = rec.stored_delta.unwrap_or(0.0);
            let delta = if delta < 0.0 { delta * self.cfg.neg_delta_scale } else { delta };
            if delta == 0.0 {
                continue;
            }
            let a = rec.action_index.ok_or_else(|| AgentError::Config("record without action index".into()))?;
            self.policy.logprob_grad_into(&rec.state, a, delta * inv, &mut g)?;
        }
        clip_norm(&mut g, self.cfg.grad_clip);
        Ok(g)
    }

    /// One Adam ascent step along [`NnacAgent::policy_gradient`].
    pub fn policy_update(&mut self, ids: &[usize]) -> Result<(), AgentError> {
        let g = self.policy_gradient(ids)?;
        if g.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        self.adam.step(&mut self.policy, &neg)?;
        Ok(())
    }

    fn diverged(&self, step: usize, what: String) -> AgentError {
        let mut buf = Vec::new();
        let _ = self.policy.write_checkpoint(&mut buf);
        AgentError::Diverged {
            step,
            what,
            checkpoint: String::from_utf8_lossy(&buf).into_owned(),
        }
    }

    /// Greedy evaluation over `eval_episodes` fixed start seeds.
    pub fn evaluate<E: DeterministicMdp>(&self, env: &E) -> Result<(f64, f64), AgentError> {
        let mut pol = |o: &[f64], _h: usize| -> Result<Action, AgentError> {
            Ok(Action::Discrete(self.policy.mode(o)?))
        };
        evaluate(&mut pol, env, self.cfg.eval_episodes, eval_seed(self.cfg.seed))
    }

    /// Run `max_steps` environment steps, evaluating every `eval_every`.
    pub fn train<E: DeterministicMdp>(&mut self, env: &E, max_steps: usize) -> Result<LearningCurve, AgentError> {
        let mut curve = LearningCurve::default();
        let mut steps = 0;
        while steps < max_steps {
            let mut s = env.reset(self.rng.next_u64());
            let mut ret = 0.0;
            for h in 0..self.horizon {
                let obs = env.observe(&s);
                let a = self.policy.sample(&obs, &mut self.rng)?;
                self.action_log.push(a);
                let t = env.step(&s, &Action::Discrete(a))?;
                let next_obs = env.observe(&t.next);
                let delta = self.td_error(&obs, t.reward, &next_obs, t.done, h)?;
                if !delta.is_finite() {
                    return Err(self.diverged(steps, format!("TD error {delta}")));
                }
                self.store(TransitionRecord {
                    state: obs,
                    action: self.action_coords[a].clone(),
                    action_index: Some(a),
                    next_state: next_obs,
                    reward: t.reward,
                    step: h,
                    terminal: t.done,
                    stored_delta: Some(delta),
                })?;
                let n = self.index.len();
                let ids = sample_indices(&mut self.rng, n, self.cfg.batch_size.min(n)).into_vec();
                if let Err(e) = self.policy_update(&ids) {
                    return Err(match e {
                        AgentError::Neural(src) => self.diverged(steps, src.to_string()),
                        other => other,
                    });
                }
                ret += t.reward;
                s = t.next;
                steps += 1;
                if self.cfg.eval_every > 0 && steps % self.cfg.eval_every == 0 {
                    let (mean, std) = self.evaluate(env)?;
                    curve.evals.push(EvalPoint { env_step: steps, mean, std });
                }
                if t.done || steps >= max_steps {
                    break;
                }
            }
            curve.episodes.push(EpisodeRecord {
                env_step: steps,
                episode_return: ret,
            });
        }
        Ok(curve)
    }
}

/// Scale `g` down to L2 norm `max_norm` if it is longer.
pub fn clip_norm(g: &mut [f64], max_norm: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::CartPole;

    fn rec(state: Vec<f64>, a: usize, delta: f64) -> TransitionRecord {
        TransitionRecord {
            state: state.clone(),
            action: vec![a as f64],
            action_index: Some(a),
            next_state: state,
            reward: 1.0,
            step: 0,
            terminal: false,
            stored_delta: Some(delta),
        }
    }

    fn agent() -> NnacAgent {
        NnacAgent::new(&CartPole::default(), NnacConfig::default()).unwrap()
    }

    #[test]
    fn zero_deltas_leave_policy_unchanged() {
        let mut ag = agent();
        ag.store(rec(vec![0.01, 0.0, 0.0, 0.0], 0, 0.0)).unwrap();
        ag.store(rec(vec![0.0, 0.02, 0.0, 0.0], 1, 0.0)).unwrap();
        let before = ag.policy().clone();
        ag.policy_update(&[0, 1]).unwrap();
        assert_eq!(ag.policy(), &before);
    }

    #[test]
    fn positive_delta_raises_logprob() {
        let mut ag = NnacAgent::new(&CartPole::default(), NnacConfig { lr: 1e-4, ..Default::default() }).unwrap();
        let s = vec![0.03, -0.1, 0.02, 0.2];
        ag.store(rec(s.clone(), 1, 1.0)).unwrap();
        let (before, _) = ag.policy().logprob_and_grad(&s, 1).unwrap();
        ag.policy_update(&[0]).unwrap();
        let (after, _) = ag.policy().logprob_and_grad(&s, 1).unwrap();
        assert!(after > before);
    }

    #[test]
    fn opposite_deltas_leave_scaled_residue() {
        let cfg = NnacConfig {
            neg_delta_scale: 0.3,
            ..Default::default()
        };
        let mut ag = NnacAgent::new(&CartPole::default(), cfg).unwrap();
        ag.policy_mut().init_uniform(0.5, 3);
        let s = vec![0.1, 0.2, -0.3, 0.05];
        ag.store(rec(s.clone(), 0, 1.0)).unwrap();
        ag.store(rec(s.clone(), 0, -1.0)).unwrap();
        let g = ag.policy_gradient(&[0, 1]).unwrap();
        let (_, score) = ag.policy().logprob_and_grad(&s, 0).unwrap();
        for (a, b) in g.iter().zip(&score) {
            assert!((a - 0.35 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let mut ag = agent();
        let before = ag.policy().clone();
        let c = ag.train(&CartPole::default(), 0).unwrap();
        assert!(c.is_empty());
        assert_eq!(ag.policy(), &before);
    }

    #[test]
    fn training_is_reproducible() {
        let env = CartPole::default();
        let cfg = NnacConfig { eval_every: 100, eval_episodes: 2, ..Default::default() };
        let a = NnacAgent::new(&env, cfg.clone()).unwrap().train(&env, 300).unwrap();
        let b = NnacAgent::new(&env, cfg).unwrap().train(&env, 300).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evals.len(), 3);
    }

    #[test]
    fn clip_norm_caps_length() {
        let mut g = vec![30.0, 40.0];
        clip_norm(&mut g, 10.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
    }
}
