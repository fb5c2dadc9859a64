//! Soft nearest-neighbor updates for DDPG-lite and TD3-lite.
//!
//! While the NN weight `alpha` exceeds `epsilon`, each sampled transition
//! carries a rollout-critic TD error `delta_NN`, stored in its record and
//! blended into both losses. [`DeltaTiming`] picks whether `delta_NN` is
//! recomputed with the target actor at every minibatch draw or computed once
//! with the online actor before the transition joins the buffer:
//!
//! * critic: `(1 - alpha) (y - Q)^2 + alpha (delta_Q - delta_NN)^2`,
//! * actor: `(1 - alpha) grad J + alpha clip(N^-1 sum_i delta_NN_i grad log pi(a_i | s_i))`.
//!
//! Once `alpha <= epsilon` the rollouts stop and the stored errors keep
//! supervising the critic through `(y - Q)^2 + epsilon (delta_Q - delta_i)^2`.
//! `alpha = alpha_0 (1 - beta)^k` after `k` episodes.
//!
//! The actors are deterministic, so `log pi` is taken of a Gaussian centered
//! on the actor output with the behavior noise std: its parameter gradient
//! is `grad mu(s) (a - mu(s)) / sigma^2`.

use rand::seq::index::sample as sample_indices;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent_nnac::clip_norm;
use crate::baseline::{
    behavior_action, eval_seed, stream_seed, target_action, ActionScale, BaseAlgo, LiteConfig, LiteNets,
};
use crate::envs::{Action, DeterministicMdp};
use crate::error::AgentError;
use crate::eval::{EpisodeRecord, EvalPoint, LearningCurve};
use crate::metric_space::{MetricSpec, Point};
use crate::nn_index::{NNIndex, TransitionRecord};
use crate::rollout::{self, RolloutConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    /// Constant `beta`.
    Geometric(f64),
    /// `beta = 0` for episodes before `switch_episode`, `1` from then on.
    Piecewise { switch_episode: usize },
}

/// When the rollout-critic TD error of a transition is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaTiming {
    /// At every minibatch draw, with the target actor, on the buffer that
    /// already holds the transition.
    Batch,
    /// Once, with the online actor, just before the transition is stored;
    /// gradient steps reuse the stored value.
    Insertion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftNnConfig {
    pub alpha0: f64,
    pub beta: BetaSchedule,
    /// NN rollouts stop once `alpha <= epsilon`; also the continual
    /// supervision weight.
    pub epsilon: f64,
    /// Target averaging rate while the NN critic is active.
    pub tau_nn: f64,
    pub neg_delta_scale: f64,
    /// L2 norm cap of the TD score gradient.
    pub grad_clip: f64,
    pub lipschitz: f64,
    pub m: usize,
    pub planning_horizon: usize,
    pub gamma: f64,
    pub state_weight: f64,
    pub action_weight: f64,
    pub empty_step_value: f64,
    pub delta_timing: DeltaTiming,
}

impl Default for SoftNnConfig {
    fn default() -> Self {
        SoftNnConfig {
            alpha0: 0.9,
            beta: BetaSchedule::Piecewise { switch_episode: 20 },
            epsilon: 1e-3,
            tau_nn: 0.2,
            neg_delta_scale: 0.3,
            grad_clip: 10.0,
            lipschitz: 7.0,
            m: 1,
            planning_horizon: 12,
            gamma: 0.99,
            state_weight: 1.0,
            action_weight: 1.0,
            empty_step_value: 1.0,
            delta_timing: DeltaTiming::Batch,
        }
    }
}

impl SoftNnConfig {
    /// `alpha0 = 0` is accepted: it switches the module off.
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha0) {
            return bad("alpha0 must lie in [0, 1]");
        }
        if let BetaSchedule::Geometric(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return bad("beta must lie in [0, 1]");
            }
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.m < 1 || self.planning_horizon < 1 {
            return bad("m and planning_horizon must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
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

/// NN weight after `k` episodes: `alpha0 (1 - beta)^k`, with the piecewise
/// schedule's `beta` taken at episode `k`.
pub fn alpha(cfg: &SoftNnConfig, k: usize) -> f64 {
    match cfg.beta {
        BetaSchedule::Geometric(b) => cfg.alpha0 * (1.0 - b).powi(k as i32),
        BetaSchedule::Piecewise { switch_episode } => {
            if k < switch_episode {
                cfg.alpha0
            } else {
                0.0
            }
        }
    }
}

/// Which blend the losses use at a given `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NnPhase {
    /// `alpha > epsilon`: fresh NN TD errors, convex blend with weight alpha.
    Active(f64),
    /// `alpha <= epsilon`: stored TD errors supervise with weight epsilon.
    Supervision(f64),
}

pub fn phase(alpha: f64, epsilon: f64) -> NnPhase {
    if alpha > epsilon {
        NnPhase::Active(alpha)
    } else {
        NnPhase::Supervision(epsilon)
    }
}

/// Per-sample critic loss given the base squared error, the critic TD error
/// `delta_q` and the reference TD error, if any.
pub fn combined_critic_loss(phase: NnPhase, base_loss: f64, delta_q: f64, delta_ref: Option<f64>) -> f64 {
    match (phase, delta_ref) {
        (_, None) => base_loss,
        (NnPhase::Active(a), Some(r)) => (1.0 - a) * base_loss + a * (delta_q - r).powi(2),
        (NnPhase::Supervision(e), Some(r)) => base_loss + e * (delta_q - r).powi(2),
    }
}

/// Derivative of [`combined_critic_loss`] with base loss `(y - q)^2` and
/// `delta_q = y - q`, with respect to `q`.
pub fn combined_critic_dq(phase: NnPhase, y: f64, q: f64, delta_ref: Option<f64>) -> f64 {
    match (phase, delta_ref) {
        (_, None) => -2.0 * (y - q),
        (NnPhase::Active(a), Some(r)) => -2.0 * (1.0 - a) * (y - q) - 2.0 * a * (y - q - r),
        (NnPhase::Supervision(e), Some(r)) => -2.0 * (y - q) - 2.0 * e * (y - q - r),
    }
}

/// `(1 - alpha) base + alpha td`, where `td` is the already clipped TD
/// score gradient.
pub fn combined_actor_gradient(alpha: f64, base: &[f64], td: &[f64]) -> Vec<f64> {
    base.iter().zip(td).map(|(b, t)| (1.0 - alpha) * b + alpha * t).collect()
}

/// Negative TD errors are multiplied by `scale`.
pub fn scale_negative(delta: f64, scale: f64) -> f64 {
    if delta < 0.0 {
        delta * scale
    } else {
        delta
    }
}

/// Adds `weight * grad_theta log N(a; mu(s), sigma^2)` into `grads`.
pub fn gaussian_score_into(
    nets: &LiteNets,
    obs: &[f64],
    action: &[f64],
    sigma: f64,
    weight: f64,
    grads: &mut [f64],
) -> Result<(), AgentError> {
    let t = nets.actor.forward_trace(obs)?;
    let mu = nets.scale.apply(&t.output);
    let inv_var = 1.0 / (sigma * sigma);
    let up: Vec<f64> = action
        .iter()
        .zip(&mu)
        .zip(&nets.scale.half)
        .map(|((a, m), h)| (a - m) * inv_var * h)
        .collect();
    nets.actor.backward_into(&t, &up, weight, grads);
    Ok(())
}

/// Log-density of `a` under `N(mu(s), sigma^2 I)`.
pub fn gaussian_logprob(nets: &LiteNets, obs: &[f64], action: &[f64], sigma: f64) -> Result<f64, AgentError> {
    let mu = nets.action_of(&nets.actor, obs)?;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(action
        .iter()
        .zip(&mu)
        .map(|(a, m)| -0.5 * ((a - m) / sigma).powi(2) - sigma.ln() - 0.5 * ln2pi)
        .sum())
}

/// DDPG-lite or TD3-lite with the soft NN module.
#[derive(Debug, Clone)]
pub struct SoftAgent {
    cfg: LiteConfig,
    soft: SoftNnConfig,
    pub nets: LiteNets,
    index: NNIndex,
    rng: ChaCha8Rng,
    horizon: usize,
    grad_steps: usize,
    episode: usize,
    /// NN rollouts performed, for tests and reports.
    pub nn_evaluations: usize,
}

impl SoftAgent {
    pub fn new<E: DeterministicMdp>(env: &E, cfg: LiteConfig, soft: SoftNnConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        soft.validate()?;
        let scale = ActionScale::from_space(&env.action_space())?;
        let metric = MetricSpec::state_action(env.obs_dim(), soft.state_weight, scale.dim(), soft.action_weight)?;
        Ok(SoftAgent {
            nets: LiteNets::new(env.obs_dim(), scale, &cfg),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed)),
            index: NNIndex::new(metric),
            horizon: env.horizon(),
            cfg,
            soft,
            grad_steps: 0,
            episode: 0,
            nn_evaluations: 0,
        })
    }

    pub fn config(&self) -> &LiteConfig {
        &self.cfg
    }

    pub fn soft_config(&self) -> &SoftNnConfig {
        &self.soft
    }

    pub fn index(&self) -> &NNIndex {
        &self.index
    }

    pub fn grad_steps(&self) -> usize {
        self.grad_steps
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn alpha(&self) -> f64 {
        alpha(&self.soft, self.episode)
    }

    pub fn algo(&self) -> BaseAlgo {
        self.cfg.algo
    }

    /// Rollout-critic TD error of buffer sample `id`, with the target actor
    /// choosing actions inside the rollouts.
    pub fn nn_td_error(&self, id: usize) -> Result<f64, AgentError> {
        let rec = &self.index.sample(id)?.payload;
        self.rollout_td(&self.nets.actor_target, rec)
    }

    fn rollout_td(&self, actor: &crate::neural::Mlp, rec: &TransitionRecord) -> Result<f64, AgentError> {
        let mut pol = |o: &[f64]| self.nets.action_of(actor, o).unwrap_or_default();
        Ok(rollout::td_error(
            &self.index,
            &rec.state,
            rec.reward,
            &rec.next_state,
            rec.terminal,
            rec.step,
            self.horizon,
            self.soft.planning_horizon,
            &mut pol,
            &self.soft.rollout(),
        )?)
    }

    fn diverged(&self, step: usize, what: String) -> AgentError {
        let mut buf = Vec::new();
        let _ = self.nets.actor.write_checkpoint(&mut buf);
        AgentError::Diverged {
            step,
            what,
            checkpoint: String::from_utf8_lossy(&buf).into_owned(),
        }
    }

    /// One critic (and possibly actor) update on a fresh minibatch.
    pub fn gradient_step(&mut self) -> Result<(), AgentError> {
        let n = self.index.len();
        let ids = sample_indices(&mut self.rng, n, self.cfg.batch_size.min(n)).into_vec();
        let mut ys = Vec::with_capacity(ids.len());
        let mut xs = Vec::with_capacity(ids.len());
        for &i in &ids {
            let rec = &self.index.sample(i)?.payload;
            let a2 = target_action(&self.nets, &self.cfg, &rec.next_state, &mut self.rng)?;
            let mut next_q = f64::INFINITY;
            for qt in &self.nets.critic_targets {
                next_q = next_q.min(LiteNets::q(qt, &rec.next_state, &a2)?);
            }
            let cont = if rec.terminal { 0.0 } else { 1.0 };
            ys.push(rec.reward + self.cfg.gamma * cont * next_q);
            xs.push(rec.key());
        }
        let ph = phase(self.alpha(), self.soft.epsilon);
        let refs: Vec<Option<f64>> = match ph {
            NnPhase::Active(_) if self.soft.delta_timing == DeltaTiming::Batch => {
                let mut out = Vec::with_capacity(ids.len());
                for &i in &ids {
                    let d = self.nn_td_error(i)?;
                    self.nn_evaluations += 1;
                    if !d.is_finite() {
                        return Err(self.diverged(self.grad_steps, format!("NN TD error {d}")));
                    }
                    self.index.set_stored_delta(i, Some(d))?;
                    out.push(Some(d));
                }
                out
            }
            _ => ids
                .iter()
                .map(|&i| self.index.sample(i).map(|s| s.payload.stored_delta))
                .collect::<Result<_, _>>()?,
        };
        for c in 0..self.nets.critics.len() {
            let mut dloss = Vec::with_capacity(xs.len());
            for ((x, y), r) in xs.iter().zip(&ys).zip(&refs) {
                let q = self.nets.critics[c].forward(x)?[0];
                dloss.push(combined_critic_dq(ph, *y, q, *r));
            }
            let g = self.nets.critic_grad(c, &xs, &dloss)?;
            if let Err(e) = self.nets.critic_adams[c].step(&mut self.nets.critics[c], &g) {
                return Err(self.diverged(self.grad_steps, e.to_string()));
            }
        }
        self.grad_steps += 1;
        if self.cfg.algo == BaseAlgo::DdpgLite || self.grad_steps % self.cfg.policy_freq == 0 {
            let states: Vec<&[f64]> = xs.iter().map(|x| &x[..self.nets.actor.input_dim()]).collect();
            let base = self.nets.actor_dpg(&states)?;
            let g = match ph {
                NnPhase::Active(a) => {
                    let mut td = vec![0.0; base.len()];
                    let inv = 1.0 / ids.len() as f64;
                    let obs_dim = self.nets.actor.input_dim();
                    for (x, r) in xs.iter().zip(&refs) {
                        let d = scale_negative(r.unwrap_or(0.0), self.soft.neg_delta_scale);
                        if d != 0.0 {
                            gaussian_score_into(
                                &self.nets,
                                &x[..obs_dim],
                                &x[obs_dim..],
                                self.cfg.expl_sigma,
                                d * inv,
                                &mut td,
                            )?;
                        }
                    }
                    clip_norm(&mut td, self.soft.grad_clip);
                    combined_actor_gradient(a, &base, &td)
                }
                NnPhase::Supervision(_) => base,
            };
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            if let Err(e) = self.nets.actor_adam.step(&mut self.nets.actor, &neg) {
                return Err(self.diverged(self.grad_steps, e.to_string()));
            }
        }
        let tau = match ph {
            NnPhase::Active(_) => self.soft.tau_nn,
            NnPhase::Supervision(_) => self.cfg.tau,
        };
        self.nets.soft_update_targets(tau);
        Ok(())
    }

    /// Train for `max_steps` environment steps.
    pub fn train<E: DeterministicMdp>(&mut self, env: &E, max_steps: usize) -> Result<LearningCurve, AgentError> {
        self.run(env, max_steps, usize::MAX)
    }

    /// Train for `episodes` whole episodes.
    pub fn train_episodes<E: DeterministicMdp>(&mut self, env: &E, episodes: usize) -> Result<LearningCurve, AgentError> {
        self.run(env, usize::MAX, episodes)
    }

    fn run<E: DeterministicMdp>(&mut self, env: &E, max_steps: usize, max_episodes: usize) -> Result<LearningCurve, AgentError> {
        let mut curve = LearningCurve::default();
        let mut steps = 0;
        let mut episodes = 0;
        while steps < max_steps && episodes < max_episodes {
            let mut s = env.reset(self.rng.next_u64());
            let mut ret = 0.0;
            for h in 0..self.horizon {
                let obs = env.observe(&s);
                let warm = self.index.len() < self.cfg.warmup_steps;
                let a = behavior_action(&self.nets, &obs, warm, self.cfg.expl_sigma, &mut self.rng)?;
                let t = env.step(&s, &Action::Continuous(a.clone()))?;
                let mut rec = TransitionRecord {
                    state: obs,
                    action: a,
                    action_index: None,
                    next_state: env.observe(&t.next),
                    reward: t.reward * self.cfg.reward_scale,
                    step: h,
                    terminal: t.done,
                    stored_delta: None,
                };
                if self.soft.delta_timing == DeltaTiming::Insertion
                    && matches!(phase(self.alpha(), self.soft.epsilon), NnPhase::Active(_))
                {
                    let d = self.rollout_td(&self.nets.actor, &rec)?;
                    self.nn_evaluations += 1;
                    if !d.is_finite() {
                        return Err(self.diverged(self.grad_steps, format!("NN TD error {d}")));
                    }
                    rec.stored_delta = Some(d);
                }
                self.index.insert(Point::new(rec.key())?, rec.reward, rec)?;
                if self.index.len() >= self.cfg.warmup_steps {
                    self.gradient_step()?;
                }
                ret += t.reward;
                s = t.next;
                steps += 1;
                if self.cfg.eval_every > 0 && steps % self.cfg.eval_every == 0 {
                    let (mean, std) = self.nets.evaluate(env, self.cfg.eval_episodes, eval_seed(self.cfg.seed))?;
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
            self.episode += 1;
            episodes += 1;
        }
        Ok(curve)
    }
}
