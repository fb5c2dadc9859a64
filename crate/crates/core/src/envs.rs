//! Deterministic finite-horizon environments.
//!
//! [`CartPole`] integrates the classic cart-pole ODEs with explicit Euler
//! steps, [`LipschitzChain`] is a one-dimensional chain whose optimal values
//! are available by dynamic programming, [`Reacher1d`] is a continuous-action
//! point mass, and [`LiftedEnv`] re-embeds any environment's observations
//! through a [`LiftMap`].

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metric_space::LiftMap;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("cannot step from a terminal state")]
    Terminal,
    #[error("invalid action {0:?} for this environment")]
    InvalidAction(Action),
    #[error("invalid environment parameter: {0}")]
    InvalidParam(String),
    #[error("lift source dimension {lift} does not match observation dimension {obs}")]
    LiftMismatch { lift: usize, obs: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for EnvError {
    fn from(e: csv::Error) -> Self {
        EnvError::Csv(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Per-coordinate closed bounds.
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn n_discrete(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Box { .. } => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub next: S,
    pub reward: f64,
    /// The successor is terminal; no further steps are allowed.
    pub done: bool,
    /// The action was outside the box and got clipped.
    pub clipped: bool,
}

/// A deterministic episodic MDP. `step` is a pure function of its inputs and
/// `reset` a pure function of the seed.
pub trait DeterministicMdp {
    type State: Clone + std::fmt::Debug;

    fn horizon(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn reset(&self, seed: u64) -> Self::State;
    fn step(&self, s: &Self::State, a: &Action) -> Result<Transition<Self::State>, EnvError>;
    fn observe(&self, s: &Self::State) -> Vec<f64>;

    /// Coordinates of `a` as appended to an observation to form a
    /// state-action point.
    fn action_coords(&self, a: &Action) -> Vec<f64> {
        match a {
            Action::Discrete(i) => vec![*i as f64],
            Action::Continuous(v) => v.clone(),
        }
    }
}

impl<E: DeterministicMdp + ?Sized> DeterministicMdp for &E {
    type State = E::State;

    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_space(&self) -> ActionSpace {
        (**self).action_space()
    }
    fn reset(&self, seed: u64) -> Self::State {
        (**self).reset(seed)
    }
    fn step(&self, s: &Self::State, a: &Action) -> Result<Transition<Self::State>, EnvError> {
        (**self).step(s, a)
    }
    fn observe(&self, s: &Self::State) -> Vec<f64> {
        (**self).observe(s)
    }
    fn action_coords(&self, a: &Action) -> Vec<f64> {
        (**self).action_coords(a)
    }
}

/// Clip a continuous action to the box, reporting whether it moved.
pub fn clip_action(v: &[f64], low: &[f64], high: &[f64]) -> (Vec<f64>, bool) {
    let mut clipped = false;
    let out = v
        .iter()
        .zip(low.iter().zip(high))
        .map(|(&x, (&lo, &hi))| {
            let y = x.clamp(lo, hi);
            clipped |= y != x;
            y
        })
        .collect();
    (out, clipped)
}

// ---------------------------------------------------------------------------
// Cart-pole

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub g: f64,
    pub m_cart: f64,
    pub m_pole: f64,
    /// Half pole length.
    pub l: f64,
    pub force: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            g: 9.8,
            m_cart: 1.0,
            m_pole: 0.1,
            l: 0.5,
            force: 10.0,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub theta: f64,
    pub theta_dot: f64,
    pub x: f64,
    pub v: f64,
}

impl CartPoleState {
    pub const X_LIMIT: f64 = 4.8;
    pub const THETA_LIMIT: f64 = 24.0 * std::f64::consts::PI / 180.0;

    pub fn alive(&self) -> bool {
        self.x.abs() <= Self::X_LIMIT && self.theta.abs() <= Self::THETA_LIMIT
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.theta, self.theta_dot, self.x, self.v]
    }

    pub fn neg(&self) -> Self {
        CartPoleState {
            theta: -self.theta,
            theta_dot: -self.theta_dot,
            x: -self.x,
            v: -self.v,
        }
    }
}

/// Accelerations `(theta_ddot, x_ddot)` under horizontal force `f`.
pub fn cartpole_accelerations(p: &CartPoleParams, s: &CartPoleState, f: f64) -> (f64, f64) {
    let total = p.m_pole + p.m_cart;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (f + p.m_pole * p.l * s.theta_dot * s.theta_dot * sin) / total;
    let theta_acc =
        (p.g * sin - cos * temp) / (p.l * (4.0 / 3.0 - p.m_pole * cos * cos / total));
    let x_acc = (f + p.m_pole * p.l * (s.theta_dot * s.theta_dot * sin - theta_acc * cos)) / total;
    (theta_acc, x_acc)
}

/// One Euler step under force `f`: positions advance with the old
/// velocities, velocities with the accelerations at the old state.
pub fn cartpole_integrate(p: &CartPoleParams, s: &CartPoleState, f: f64) -> CartPoleState {
    let (theta_acc, x_acc) = cartpole_accelerations(p, s, f);
    CartPoleState {
        x: s.x + p.dt * s.v,
        v: s.v + p.dt * x_acc,
        theta: s.theta + p.dt * s.theta_dot,
        theta_dot: s.theta_dot + p.dt * theta_acc,
    }
}

/// Discrete (`0` = push left, `1` = push right) or continuous
/// (force `F * a`, `a` in `[-1, 1]`) cart-pole. Reward is 1 while the
/// successor is alive and 0 on the terminating step.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    pub params: CartPoleParams,
    pub horizon: usize,
    pub continuous: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            params: CartPoleParams::default(),
            horizon: 500,
            continuous: false,
        }
    }
}

impl CartPole {
    pub fn continuous() -> Self {
        CartPole {
            continuous: true,
            ..Default::default()
        }
    }
}

impl DeterministicMdp for CartPole {
    type State = CartPoleState;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        if self.continuous {
            ActionSpace::Box {
                low: vec![-1.0],
                high: vec![1.0],
            }
        } else {
            ActionSpace::Discrete(2)
        }
    }

    fn reset(&self, seed: u64) -> CartPoleState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.random_range(-0.05..=0.05);
        CartPoleState {
            theta: u(),
            theta_dot: u(),
            x: u(),
            v: u(),
        }
    }

    fn step(&self, s: &CartPoleState, a: &Action) -> Result<Transition<CartPoleState>, EnvError> {
        if !s.alive() {
            return Err(EnvError::Terminal);
        }
        let (push, clipped) = match (a, self.continuous) {
            (Action::Discrete(0), false) => (-1.0, false),
            (Action::Discrete(1), false) => (1.0, false),
            (Action::Continuous(v), true) if v.len() == 1 => {
                let (c, clipped) = clip_action(v, &[-1.0], &[1.0]);
                (c[0], clipped)
            }
            _ => return Err(EnvError::InvalidAction(a.clone())),
        };
        let next = cartpole_integrate(&self.params, s, self.params.force * push);
        let done = !next.alive();
        Ok(Transition {
            next,
            reward: if done { 0.0 } else { 1.0 },
            done,
            clipped,
        })
    }

    fn observe(&self, s: &CartPoleState) -> Vec<f64> {
        s.to_vec()
    }
}

// ---------------------------------------------------------------------------
// Lipschitz chain

/// States in `[0, 1]`, actions `{-step, 0, +step}` moving the state with
/// clamping, state-only reward `r(s) = 1 - (s - peak)^2 / 1.4` which is
/// 1-Lipschitz on `[0, 1]` for any peak in `[0.3, 0.7]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzChain {
    pub step: f64,
    pub horizon: usize,
    pub peak: f64,
    /// Episodes start on the grid `{0, 1/n, ..., 1}` with this many cells.
    pub start_cells: usize,
}

impl Default for LipschitzChain {
    fn default() -> Self {
        LipschitzChain {
            step: 0.1,
            horizon: 5,
            peak: 0.7,
            start_cells: 10,
        }
    }
}

impl LipschitzChain {
    pub const ACTIONS: usize = 3;

    pub fn reward(&self, s: f64) -> f64 {
        1.0 - (s - self.peak).powi(2) / 1.4
    }

    /// Displacement of action index `a`.
    pub fn displacement(&self, a: usize) -> f64 {
        [-self.step, 0.0, self.step][a]
    }

    pub fn next_state(&self, s: f64, a: usize) -> f64 {
        (s + self.displacement(a)).clamp(0.0, 1.0)
    }

    pub fn start_states(&self) -> Vec<f64> {
        (0..=self.start_cells)
            .map(|i| i as f64 / self.start_cells as f64)
            .collect()
    }

    /// `|r(s) - r(s')| <= reward_lipschitz * |s - s'|`.
    pub fn reward_lipschitz(&self) -> f64 {
        2.0 * self.peak.max(1.0 - self.peak) / 1.4
    }

    /// Lipschitz constant of `Q*_h` over state-action points under state
    /// weight `w_s` and action weight `w_a`: `Q*_h(s, a) = r(s) + V*_{h+1}(s + a)`
    /// varies by at most `H |ds| + (H - 1) |da|`, and Cauchy-Schwarz turns
    /// that into the weighted distance.
    pub fn declared_l1(&self, w_s: f64, w_a: f64) -> f64 {
        let h = self.horizon as f64 * self.reward_lipschitz();
        let h1 = (self.horizon as f64 - 1.0) * self.reward_lipschitz();
        (h * h / w_s + h1 * h1 / w_a).sqrt()
    }

    /// Successor distance factor: for a shared next action,
    /// `d(f(x), f(x')) <= L2 d(x, x')` because `|ds'| <= |ds| + |da|`.
    pub fn declared_l2(&self, w_s: f64, w_a: f64) -> f64 {
        (1.0 + w_s / w_a).sqrt()
    }
}

impl DeterministicMdp for LipschitzChain {
    type State = f64;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(Self::ACTIONS)
    }

    fn reset(&self, seed: u64) -> f64 {
        let starts = self.start_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        starts[rng.random_range(0..starts.len())]
    }

    fn step(&self, s: &f64, a: &Action) -> Result<Transition<f64>, EnvError> {
        match a {
            Action::Discrete(i) if *i < Self::ACTIONS => Ok(Transition {
                next: self.next_state(*s, *i),
                reward: self.reward(*s),
                done: false,
                clipped: false,
            }),
            _ => Err(EnvError::InvalidAction(a.clone())),
        }
    }

    fn observe(&self, s: &f64) -> Vec<f64> {
        vec![*s]
    }

    fn action_coords(&self, a: &Action) -> Vec<f64> {
        match a {
            Action::Discrete(i) if *i < Self::ACTIONS => vec![self.displacement(*i)],
            Action::Discrete(_) => vec![f64::NAN],
            Action::Continuous(v) => v.clone(),
        }
    }
}

/// Optimal values of a [`LipschitzChain`] on a uniform grid of `[0, 1]`.
/// `values[h][i]` is `V*_h` at grid point `i` for steps `h = 0..=H` (0-based,
/// `V*_H = 0`).
#[derive(Debug, Clone)]
pub struct DpTable {
    pub grid_n: usize,
    pub values: Vec<Vec<f64>>,
    env: LipschitzChain,
}

pub fn dp_optimal_values(env: &LipschitzChain, grid_n: usize) -> Result<DpTable, EnvError> {
    if grid_n < 2 {
        return Err(EnvError::InvalidParam(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let h_total = env.horizon;
    let grid = |i: usize| i as f64 / (grid_n - 1) as f64;
    let snap = |s: f64| ((s * (grid_n - 1) as f64).round() as usize).min(grid_n - 1);
    let mut values = vec![vec![0.0; grid_n]; h_total + 1];
    for h in (0..h_total).rev() {
        for i in 0..grid_n {
            let s = grid(i);
            let best = (0..LipschitzChain::ACTIONS)
                .map(|a| values[h + 1][snap(env.next_state(s, a))])
                .fold(f64::NEG_INFINITY, f64::max);
            values[h][i] = env.reward(s) + best;
        }
    }
    Ok(DpTable {
        grid_n,
        values,
        env: env.clone(),
    })
}

impl DpTable {
    /// `V*_h(s)` by linear interpolation between grid points.
    pub fn value(&self, h: usize, s: f64) -> f64 {
        let v = &self.values[h.min(self.values.len() - 1)];
        let pos = s.clamp(0.0, 1.0) * (self.grid_n - 1) as f64;
        let i = (pos.floor() as usize).min(self.grid_n - 2);
        let t = pos - i as f64;
        v[i] * (1.0 - t) + v[i + 1] * t
    }

    /// `Q*_h(s, a) = r(s) + V*_{h+1}(f(s, a))`.
    pub fn q_value(&self, h: usize, s: f64, a: usize) -> f64 {
        self.env.reward(s) + self.value(h + 1, self.env.next_state(s, a))
    }

    /// `Q*_h` at a state-action point whose action coordinate is a
    /// displacement; the displacement need not belong to the action set.
    pub fn q_value_at(&self, h: usize, s: f64, displacement: f64) -> f64 {
        self.env.reward(s) + self.value(h + 1, (s + displacement).clamp(0.0, 1.0))
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

// ---------------------------------------------------------------------------
// Reacher1d

#[derive(Debug, Clone, PartialEq)]
pub struct Reacher1d {
    pub dt: f64,
    pub horizon: usize,
    pub target: f64,
    /// Start positions are uniform in `[-start_spread, start_spread]` at rest.
    pub start_spread: f64,
}

impl Default for Reacher1d {
    fn default() -> Self {
        Reacher1d {
            dt: 0.1,
            horizon: 50,
            target: 1.0,
            start_spread: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReacherState {
    pub pos: f64,
    pub vel: f64,
}

impl Reacher1d {
    /// Semi-implicit Euler for a unit mass: velocity first, then position
    /// with the new velocity. Returns the successor and reward.
    pub fn integrate(&self, s: &ReacherState, a: f64) -> (ReacherState, f64) {
        let vel = s.vel + self.dt * a;
        let pos = s.pos + self.dt * vel;
        let reward = (1.0 - (pos - self.target).abs()).clamp(0.0, 1.0);
        (ReacherState { pos, vel }, reward)
    }

    /// Best two-step return from `s` over `a1, a2` in `[-1, 1]`. The return is
    /// piecewise linear in `(a1, a2)`, so its maximum sits on a vertex of the
    /// arrangement formed by the box edges and the kink lines
    /// `pos_k = target + c`, `c` in `{-1, 0, 1}`; all vertices are enumerated.
    pub fn two_step_optimum(&self, s: &ReacherState) -> (f64, f64, f64) {
        let dt = self.dt;
        // pos1 = p0 + dt v0 + dt^2 a1
        // pos2 = p0 + 2 dt v0 + 3 dt^2 a1 + dt^2 a2
        let p1_0 = s.pos + dt * s.vel;
        let p2_0 = s.pos + 2.0 * dt * s.vel;
        let (k1, k2a1, k2a2) = (dt * dt, 3.0 * dt * dt, dt * dt);
        let kinks = [-1.0, 0.0, 1.0].map(|c| self.target + c);
        let in_box = |a: f64| (-1.0..=1.0).contains(&a);
        let mut a1s = vec![-1.0, 1.0];
        for &t in &kinks {
            a1s.push((t - p1_0) / k1);
            for a2 in [-1.0, 1.0] {
                a1s.push((t - p2_0 - k2a2 * a2) / k2a1);
            }
        }
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for &a1 in a1s.iter().filter(|a| in_box(**a)) {
            let mut a2s = vec![-1.0, 1.0];
            for &t in &kinks {
                a2s.push((t - p2_0 - k2a1 * a1) / k2a2);
            }
            for &a2 in a2s.iter().filter(|a| in_box(**a)) {
                let (s1, r1) = self.integrate(s, a1);
                let (_, r2) = self.integrate(&s1, a2);
                if r1 + r2 > best.0 {
                    best = (r1 + r2, a1, a2);
                }
            }
        }
        best
    }
}

impl DeterministicMdp for Reacher1d {
    type State = ReacherState;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            low: vec![-1.0],
            high: vec![1.0],
        }
    }

    fn reset(&self, seed: u64) -> ReacherState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ReacherState {
            pos: rng.random_range(-self.start_spread..=self.start_spread),
            vel: 0.0,
        }
    }

    fn step(&self, s: &ReacherState, a: &Action) -> Result<Transition<ReacherState>, EnvError> {
        let v = match a {
            Action::Continuous(v) if v.len() == 1 => v,
            _ => return Err(EnvError::InvalidAction(a.clone())),
        };
        if !v[0].is_finite() {
            return Err(EnvError::InvalidAction(a.clone()));
        }
        let (c, clipped) = clip_action(v, &[-1.0], &[1.0]);
        let (next, reward) = self.integrate(s, c[0]);
        Ok(Transition {
            next,
            reward,
            done: false,
            clipped,
        })
    }

    fn observe(&self, s: &ReacherState) -> Vec<f64> {
        vec![s.pos, s.vel]
    }
}

// ---------------------------------------------------------------------------
// Lifted observations

/// Same dynamics and rewards as `inner`; observations pass through `lift`.
#[derive(Debug, Clone)]
pub struct LiftedEnv<E> {
    pub inner: E,
    pub lift: LiftMap,
}

impl<E: DeterministicMdp> LiftedEnv<E> {
    pub fn new(inner: E, lift: LiftMap) -> Result<Self, EnvError> {
        if lift.source_dim() != inner.obs_dim() {
            return Err(EnvError::LiftMismatch {
                lift: lift.source_dim(),
                obs: inner.obs_dim(),
            });
        }
        Ok(LiftedEnv { inner, lift })
    }
}

impl<E: DeterministicMdp> DeterministicMdp for LiftedEnv<E> {
    type State = E::State;

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn obs_dim(&self) -> usize {
        self.lift.target_dim()
    }

    fn action_space(&self) -> ActionSpace {
        self.inner.action_space()
    }

    fn reset(&self, seed: u64) -> E::State {
        self.inner.reset(seed)
    }

    fn step(&self, s: &E::State, a: &Action) -> Result<Transition<E::State>, EnvError> {
        self.inner.step(s, a)
    }

    fn observe(&self, s: &E::State) -> Vec<f64> {
        self.lift.apply(&self.inner.observe(s))
    }

    fn action_coords(&self, a: &Action) -> Vec<f64> {
        self.inner.action_coords(a)
    }
}

/// Play a fixed action sequence from `reset(seed)`, stopping at termination
/// or after the horizon. Returns the per-step records.
pub fn play_actions<E: DeterministicMdp>(
    env: &E,
    seed: u64,
    actions: &[Action],
) -> Result<Vec<(Vec<f64>, Action, f64, bool)>, EnvError> {
    let mut s = env.reset(seed);
    let mut out = Vec::new();
    for a in actions.iter().take(env.horizon()) {
        let obs = env.observe(&s);
        let t = env.step(&s, a)?;
        out.push((obs, a.clone(), t.reward, t.done));
        s = t.next;
        if t.done {
            break;
        }
    }
    Ok(out)
}

/// Trajectory dump: `step, o0..o{n-1}, action.., reward, done`.
pub fn write_trajectory_csv<W: Write>(
    w: W,
    steps: &[(Vec<f64>, Action, f64, bool)],
) -> Result<(), EnvError> {
    let mut wr = csv::Writer::from_writer(w);
    let (od, ad) = steps.first().map_or((0, 0), |(o, a, _, _)| {
        (
            o.len(),
            match a {
                Action::Discrete(_) => 1,
                Action::Continuous(v) => v.len(),
            },
        )
    });
    let mut header = vec!["step".to_string()];
    header.extend((0..od).map(|i| format!("o{i}")));
    header.extend((0..ad).map(|i| format!("a{i}")));
    header.push("reward".into());
    header.push("done".into());
    wr.write_record(&header)?;
    for (k, (o, a, r, d)) in steps.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(o.iter().map(f64::to_string));
        match a {
            Action::Discrete(i) => row.push(i.to_string()),
            Action::Continuous(v) => row.extend(v.iter().map(f64::to_string)),
        }
        row.push(r.to_string());
        row.push(u8::from(*d).to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_space::make_lift;

    const ZERO: CartPoleState = CartPoleState {
        theta: 0.0,
        theta_dot: 0.0,
        x: 0.0,
        v: 0.0,
    };

    #[test]
    fn cartpole_origin_push_right() {
        let p = CartPoleParams::default();
        let (ta, xa) = cartpole_accelerations(&p, &ZERO, 10.0);
        // theta_ddot = -(10/1.1) / (0.5 (4/3 - 0.1/1.1)), x_ddot = (10 - 0.05 theta_ddot) / 1.1
        let expect_ta = -(10.0 / 1.1) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let expect_xa = (10.0 - 0.05 * expect_ta) / 1.1;
        assert!((ta - expect_ta).abs() < 1e-12 && (ta + 14.6341).abs() < 1e-4);
        assert!((xa - expect_xa).abs() < 1e-12 && (xa - 9.7561).abs() < 1e-4);
        let env = CartPole::default();
        let t = env.step(&ZERO, &Action::Discrete(1)).unwrap();
        assert_eq!((t.next.theta, t.next.x), (0.0, 0.0));
        assert!((t.next.theta_dot + 0.292683).abs() < 1e-6);
        assert!((t.next.v - 0.195122).abs() < 1e-6);
        assert_eq!((t.reward, t.done), (1.0, false));
    }

    #[test]
    fn cartpole_termination() {
        let env = CartPole::default();
        let s = CartPoleState {
            theta: 23.9f64.to_radians(),
            theta_dot: 5.0,
            x: 0.0,
            v: 0.0,
        };
        for a in 0..2 {
            let t = env.step(&s, &Action::Discrete(a)).unwrap();
            assert!(t.done);
            assert_eq!(t.reward, 0.0);
            assert!(matches!(env.step(&t.next, &Action::Discrete(0)), Err(EnvError::Terminal)));
        }
    }

    #[test]
    fn cartpole_mirror_symmetry() {
        let env = CartPole::default();
        let s = CartPoleState {
            theta: 0.03,
            theta_dot: -0.2,
            x: 0.5,
            v: 0.1,
        };
        let r = env.step(&s, &Action::Discrete(1)).unwrap().next;
        let l = env.step(&s.neg(), &Action::Discrete(0)).unwrap().next;
        assert_eq!(l, r.neg());
    }

    #[test]
    fn cartpole_rejects_wrong_action_kind() {
        let env = CartPole::default();
        assert!(env.step(&ZERO, &Action::Discrete(2)).is_err());
        assert!(env.step(&ZERO, &Action::Continuous(vec![0.5])).is_err());
        let c = CartPole::continuous();
        let t = c.step(&ZERO, &Action::Continuous(vec![2.0])).unwrap();
        assert!(t.clipped);
        assert_eq!(t.next, env.step(&ZERO, &Action::Discrete(1)).unwrap().next);
    }

    #[test]
    fn cartpole_reset_is_seeded() {
        let env = CartPole::default();
        assert_eq!(env.reset(3), env.reset(3));
        assert_ne!(env.reset(3), env.reset(4));
        let s = env.reset(9);
        assert!(s.to_vec().iter().all(|c| c.abs() <= 0.05));
    }

    #[test]
    fn chain_steps() {
        let env = LipschitzChain::default();
        assert_eq!(env.step(&1.0, &Action::Discrete(2)).unwrap().next, 1.0);
        assert_eq!(env.step(&0.5, &Action::Discrete(1)).unwrap().next, 0.5);
        assert!(env.step(&0.5, &Action::Discrete(3)).is_err());
        let dr = (env.reward(0.3) - env.reward(0.31)).abs();
        assert!(dr <= env.reward_lipschitz() * 0.01 + 1e-15);
        assert!(env.reward(0.0) >= 0.0 && env.reward(env.peak) == 1.0);
    }

    #[test]
    fn dp_terminal_and_constant_cases() {
        let env = LipschitzChain {
            horizon: 1,
            ..Default::default()
        };
        let t = dp_optimal_values(&env, 101).unwrap();
        for i in 0..101 {
            let s = i as f64 / 100.0;
            assert_eq!(t.values[0][i], env.reward(s));
        }
        assert!(dp_optimal_values(&env, 1).is_err());
    }

    #[test]
    fn reacher_basics() {
        let env = Reacher1d::default();
        let at = ReacherState {
            pos: env.target,
            vel: 0.0,
        };
        let t = env.step(&at, &Action::Continuous(vec![0.0])).unwrap();
        assert_eq!(t.reward, 1.0);
        let rest = ReacherState { pos: 0.0, vel: 0.0 };
        let t = env.step(&rest, &Action::Continuous(vec![1.0])).unwrap();
        assert_eq!(t.next.vel, env.dt);
        let t = env.step(&rest, &Action::Continuous(vec![-3.0])).unwrap();
        assert!(t.clipped && t.next.vel == -env.dt);
        assert!(env.step(&rest, &Action::Discrete(0)).is_err());
    }

    #[test]
    fn lifted_env_preserves_dynamics() {
        let inner = CartPole::default();
        let env = LiftedEnv::new(inner.clone(), make_lift(4, 10, 1.0, 2).unwrap()).unwrap();
        assert_eq!(env.observe(&ZERO), vec![0.0; 10]);
        let acts: Vec<Action> = (0..60).map(|i| Action::Discrete((i * 7 % 3) % 2)).collect();
        let a = play_actions(&inner, 5, &acts).unwrap();
        let b = play_actions(&env, 5, &acts).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.2, x.3), (y.2, y.3));
        }
        assert!(LiftedEnv::new(inner, make_lift(3, 10, 1.0, 2).unwrap()).is_err());
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let env = LipschitzChain::default();
        let steps = play_actions(&env, 1, &[Action::Discrete(2), Action::Discrete(0)]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &steps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,o0,a0,reward,done\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
