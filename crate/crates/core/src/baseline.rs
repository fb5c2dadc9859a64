//! Plain DDPG-lite and TD3-lite for continuous-action environments.
//!
//! Both agents use a tanh actor scaled to the action box, ReLU critics
//! `Q(s, a)`, Polyak-averaged target copies and a uniform replay buffer.
//! TD3-lite adds twin critics with a min target, clipped target-policy noise
//! and delayed actor updates.
//!
//! Random draws come from one ChaCha stream per agent in a fixed order: the
//! reset seed of each episode, then per step the behavior action (uniform
//! during warmup, Gaussian noise after), then per gradient step the minibatch
//! indices followed by the TD3 target noise of each sampled transition.
//! [`crate::agent_soft`] consumes the stream in the same order.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{Action, ActionSpace, DeterministicMdp};
use crate::error::AgentError;
pub use crate::eval::eval_seed;
use crate::eval::{evaluate, EpisodeRecord, EvalPoint, LearningCurve};
use crate::neural::{Activation, AdamState, Head, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseAlgo {
    DdpgLite,
    Td3Lite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiteConfig {
    pub algo: BaseAlgo,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Target-network averaging rate.
    pub tau: f64,
    /// Std of the Gaussian behavior noise, in action units.
    pub expl_sigma: f64,
    /// Std of the TD3 target-policy noise.
    pub target_sigma: f64,
    /// TD3 target noise is clipped to `[-noise_clip, noise_clip]`.
    pub noise_clip: f64,
    /// TD3 actor update period, in gradient steps.
    pub policy_freq: usize,
    pub batch_size: usize,
    /// Uniform random actions before the first gradient step.
    pub warmup_steps: usize,
    /// Uniform init bound of the output layers; hidden layers use
    /// `1 / sqrt(fan_in)`.
    pub init_bound: f64,
    /// Rewards are multiplied by this before storage.
    pub reward_scale: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for LiteConfig {
    fn default() -> Self {
        LiteConfig {
            algo: BaseAlgo::Td3Lite,
            hidden: 64,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            expl_sigma: 0.2,
            target_sigma: 0.2,
            noise_clip: 0.5,
            policy_freq: 2,
            batch_size: 64,
            warmup_steps: 500,
            init_bound: 3e-3,
            reward_scale: 1.0,
            eval_every: 1000,
            eval_episodes: 5,
            seed: 1,
        }
    }
}

impl LiteConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden == 0 || self.batch_size == 0 || self.eval_episodes == 0 {
            return bad("hidden, batch_size and eval_episodes must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.expl_sigma <= 0.0 || self.target_sigma < 0.0 || self.noise_clip < 0.0 {
            return bad("noise scales must be nonnegative and expl_sigma positive");
        }
        if self.policy_freq == 0 {
            return bad("policy_freq must be >= 1");
        }
        Ok(())
    }

    pub fn n_critics(&self) -> usize {
        match self.algo {
            BaseAlgo::DdpgLite => 1,
            BaseAlgo::Td3Lite => 2,
        }
    }
}

/// Affine map from the actor's `[-1, 1]` output to an action box.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScale {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionScale {
    pub fn from_space(space: &ActionSpace) -> Result<Self, AgentError> {
        match space {
            ActionSpace::Box { low, high } => Ok(ActionScale {
                center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
                half: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
                low: low.clone(),
                high: high.clone(),
            }),
            ActionSpace::Discrete(_) => Err(AgentError::Config("needs a continuous action box".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.center).zip(&self.half).map(|((u, c), h)| c + h * u).collect()
    }

    pub fn clip(&self, a: &mut [f64]) {
        for ((v, l), h) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// Actor, critics, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct LiteNets {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    pub actor_adam: AdamState,
    pub critic_adams: Vec<AdamState>,
    pub scale: ActionScale,
}

fn init_net(net: &mut Mlp, out_bound: f64, seed: u64) {
    let n = net.layers().len();
    for i in 0..n {
        let bound = if i + 1 == n {
            out_bound
        } else {
            1.0 / (net.layers()[i].inputs as f64).sqrt()
        };
        net.init_layer_uniform(i, bound, seed);
    }
}

impl LiteNets {
    /// Actor `obs -> hidden -> hidden -> act` (tanh output) seeded with
    /// `seed`, critic `n` `obs + act -> hidden -> hidden -> 1` seeded with
    /// `seed + 1 + n`; targets start as copies.
    pub fn new(obs_dim: usize, scale: ActionScale, cfg: &LiteConfig) -> Self {
        let act_dim = scale.dim();
        let mut actor = Mlp::dense(
            &[obs_dim, cfg.hidden, cfg.hidden, act_dim],
            Activation::Relu,
            Activation::Tanh,
            Head::Identity,
        );
        init_net(&mut actor, cfg.init_bound, cfg.seed);
        let critics: Vec<Mlp> = (0..cfg.n_critics())
            .map(|n| {
                let mut q = Mlp::dense(
                    &[obs_dim + act_dim, cfg.hidden, cfg.hidden, 1],
                    Activation::Relu,
                    Activation::Linear,
                    Head::Identity,
                );
                init_net(&mut q, cfg.init_bound, cfg.seed.wrapping_add(1 + n as u64));
                q
            })
            .collect();
        LiteNets {
            actor_target: actor.clone(),
            actor_adam: AdamState::new(actor.n_params(), cfg.actor_lr),
            critic_targets: critics.clone(),
            critic_adams: critics.iter().map(|q| AdamState::new(q.n_params(), cfg.critic_lr)).collect(),
            actor,
            critics,
            scale,
        }
    }

    /// Noise-free action of `net` (actor or target actor) at `obs`.
    pub fn action_of(&self, net: &Mlp, obs: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.scale.apply(&net.forward(obs)?))
    }

    pub fn q(net: &Mlp, obs: &[f64], a: &[f64]) -> Result<f64, AgentError> {
        let mut x = obs.to_vec();
        x.extend_from_slice(a);
        Ok(net.forward(&x)?[0])
    }

    /// Deterministic policy gradient `N^-1 sum_i dQ_1/da * dmu/dtheta` at
    /// `states` (ascent direction).
    pub fn actor_dpg(&self, states: &[&[f64]]) -> Result<Vec<f64>, AgentError> {
        let mut g = vec![0.0; self.actor.n_params()];
        let inv = 1.0 / states.len() as f64;
        let obs_dim = self.actor.input_dim();
        for s in states {
            let at = self.actor.forward_trace(s)?;
            let a = self.scale.apply(&at.output);
            let mut x = s.to_vec();
            x.extend_from_slice(&a);
            let qt = self.critics[0].forward_trace(&x)?;
            let mut scratch = vec![0.0; self.critics[0].n_params()];
            let dx = self.critics[0].backward_into(&qt, &[1.0], 1.0, &mut scratch);
            let up: Vec<f64> = dx[obs_dim..].iter().zip(&self.scale.half).map(|(d, h)| d * h).collect();
            self.actor.backward_into(&at, &up, inv, &mut g);
        }
        Ok(g)
    }

    /// Gradient of `N^-1 sum_i loss_i` for critic `n`, where `dloss[i]` is
    /// `d loss_i / d Q_n(s_i, a_i)` at the inputs `xs[i] = (s_i, a_i)`.
    pub fn critic_grad(&self, n: usize, xs: &[Vec<f64>], dloss: &[f64]) -> Result<Vec<f64>, AgentError> {
        let q = &self.critics[n];
        let mut g = vec![0.0; q.n_params()];
        let inv = 1.0 / xs.len() as f64;
        for (x, d) in xs.iter().zip(dloss) {
            let t = q.forward_trace(x)?;
            q.backward_into(&t, &[*d], inv, &mut g);
        }
        Ok(g)
    }

    pub fn soft_update_targets(&mut self, tau: f64) {
        self.actor_target.soft_update_from(&self.actor, tau);
        for (t, q) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.soft_update_from(q, tau);
        }
    }

    pub fn evaluate<E: DeterministicMdp>(&self, env: &E, episodes: usize, seed0: u64) -> Result<(f64, f64), AgentError> {
        let mut pol = |o: &[f64], _h: usize| -> Result<Action, AgentError> {
            Ok(Action::Continuous(self.action_of(&self.actor, o)?))
        };
        evaluate(&mut pol, env, episodes, seed0)
    }
}

/// Behavior action: uniform in the box during warmup, else the actor's
/// action plus `N(0, expl_sigma)` noise per coordinate, clipped to the box.
pub fn behavior_action(
    nets: &LiteNets,
    obs: &[f64],
    warmup: bool,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AgentError> {
    let sc = &nets.scale;
    if warmup {
        return Ok((0..sc.dim()).map(|i| rng.random_range(sc.low[i]..=sc.high[i])).collect());
    }
    let mut a = nets.action_of(&nets.actor, obs)?;
    for v in a.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    sc.clip(&mut a);
    Ok(a)
}

/// Target action at `next_obs`: the target actor's output, with clipped
/// Gaussian smoothing noise for TD3.
pub fn target_action(
    nets: &LiteNets,
    cfg: &LiteConfig,
    next_obs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AgentError> {
    let mut a = nets.action_of(&nets.actor_target, next_obs)?;
    if cfg.algo == BaseAlgo::Td3Lite {
        for (v, h) in a.iter_mut().zip(&nets.scale.half) {
            let z: f64 = rng.sample(StandardNormal);
            *v += (cfg.target_sigma * z).clamp(-cfg.noise_clip, cfg.noise_clip) * h;
        }
        nets.scale.clip(&mut a);
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// The unmodified base agent.
#[derive(Debug, Clone)]
pub struct BaseAgent {
    cfg: LiteConfig,
    pub nets: LiteNets,
    buffer: Vec<Stored>,
    rng: ChaCha8Rng,
    grad_steps: usize,
}

/// Stream seed shared by the base and soft agents.
pub fn stream_seed(seed: u64) -> u64 {
    seed ^ 0x0d06_c0de_5eed
}

impl BaseAgent {
    pub fn new<E: DeterministicMdp>(env: &E, cfg: LiteConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        let scale = ActionScale::from_space(&env.action_space())?;
        Ok(BaseAgent {
            nets: LiteNets::new(env.obs_dim(), scale, &cfg),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed)),
            cfg,
            buffer: Vec::new(),
            grad_steps: 0,
        })
    }

    pub fn config(&self) -> &LiteConfig {
        &self.cfg
    }

    pub fn grad_steps(&self) -> usize {
        self.grad_steps
    }

    fn gradient_step(&mut self) -> Result<(), AgentError> {
        let n = self.buffer.len();
        let ids = sample_indices(&mut self.rng, n, self.cfg.batch_size.min(n)).into_vec();
        let mut ys = Vec::with_capacity(ids.len());
        let mut xs = Vec::with_capacity(ids.len());
        for &i in &ids {
            let t = &self.buffer[i];
            let a2 = target_action(&self.nets, &self.cfg, &t.next_obs, &mut self.rng)?;
            let mut next_q = f64::INFINITY;
            for qt in &self.nets.critic_targets {
                next_q = next_q.min(LiteNets::q(qt, &t.next_obs, &a2)?);
            }
            let cont = if t.terminal { 0.0 } else { 1.0 };
            ys.push(t.reward + self.cfg.gamma * cont * next_q);
            let mut x = t.obs.clone();
            x.extend_from_slice(&t.action);
            xs.push(x);
        }
        for c in 0..self.nets.critics.len() {
            let mut dloss = Vec::with_capacity(xs.len());
            for (x, y) in xs.iter().zip(&ys) {
                let q = self.nets.critics[c].forward(x)?[0];
                dloss.push(-2.0 * (y - q));
            }
            let g = self.nets.critic_grad(c, &xs, &dloss)?;
            self.nets.critic_adams[c].step(&mut self.nets.critics[c], &g)?;
        }
        self.grad_steps += 1;
        if self.cfg.algo == BaseAlgo::DdpgLite || self.grad_steps % self.cfg.policy_freq == 0 {
            let states: Vec<&[f64]> = ids.iter().map(|&i| self.buffer[i].obs.as_slice()).collect();
            let g = self.nets.actor_dpg(&states)?;
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            self.nets.actor_adam.step(&mut self.nets.actor, &neg)?;
        }
        self.nets.soft_update_targets(self.cfg.tau);
        Ok(())
    }

    pub fn train<E: DeterministicMdp>(&mut self, env: &E, max_steps: usize) -> Result<LearningCurve, AgentError> {
        let mut curve = LearningCurve::default();
        let mut steps = 0;
        while steps < max_steps {
            let mut s = env.reset(self.rng.next_u64());
            let mut ret = 0.0;
            for _h in 0..env.horizon() {
                let obs = env.observe(&s);
                let warm = self.buffer.len() < self.cfg.warmup_steps;
                let a = behavior_action(&self.nets, &obs, warm, self.cfg.expl_sigma, &mut self.rng)?;
                let t = env.step(&s, &Action::Continuous(a.clone()))?;
                let next_obs = env.observe(&t.next);
                self.buffer.push(Stored {
                    obs,
                    action: a,
                    reward: t.reward * self.cfg.reward_scale,
                    next_obs,
                    terminal: t.done,
                });
                if self.buffer.len() >= self.cfg.warmup_steps {
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
        }
        Ok(curve)
    }
}
