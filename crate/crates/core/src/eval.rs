//! Noise-free evaluation and learning-curve records.

use std::io::{Read, Write};

use crate::envs::{Action, DeterministicMdp};
use crate::error::AgentError;

/// Anything that picks an action from an observation and step index.
pub trait Policy {
    fn act(&mut self, obs: &[f64], h: usize) -> Result<Action, AgentError>;
}

impl<F> Policy for F
where
    F: FnMut(&[f64], usize) -> Result<Action, AgentError>,
{
    fn act(&mut self, obs: &[f64], h: usize) -> Result<Action, AgentError> {
        self(obs, h)
    }
}

/// Return of one episode from `reset(seed)`, truncated at the horizon.
pub fn episode_return<E: DeterministicMdp, P: Policy + ?Sized>(
    policy: &mut P,
    env: &E,
    seed: u64,
) -> Result<f64, AgentError> {
    let mut s = env.reset(seed);
    let mut total = 0.0;
    for h in 0..env.horizon() {
        let a = policy.act(&env.observe(&s), h)?;
        let t = env.step(&s, &a)?;
        total += t.reward;
        s = t.next;
        if t.done {
            break;
        }
    }
    Ok(total)
}

/// Mean and population standard deviation of returns over episodes seeded
/// `seed0, seed0 + 1, ...`.
pub fn evaluate<E: DeterministicMdp, P: Policy + ?Sized>(
    policy: &mut P,
    env: &E,
    n_episodes: usize,
    seed0: u64,
) -> Result<(f64, f64), AgentError> {
    if n_episodes == 0 {
        return Err(AgentError::Config("evaluation needs at least one episode".into()));
    }
    let returns = (0..n_episodes)
        .map(|i| episode_return(policy, env, seed0.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_std(&returns))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub env_step: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    /// Environment steps taken when the episode ended.
    pub env_step: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub evals: Vec<EvalPoint>,
    pub episodes: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn is_empty(&self) -> bool {
        self.evals.is_empty() && self.episodes.is_empty()
    }

    /// `env_step,eval_return_mean,eval_return_std`.
    pub fn write_evals_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "env_step,eval_return_mean,eval_return_std")?;
        for e in &self.evals {
            writeln!(w, "{},{},{}", e.env_step, e.mean, e.std)?;
        }
        w.flush()
    }

    /// `episode,env_step,return`.
    pub fn write_episodes_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "episode,env_step,return")?;
        for (i, e) in self.episodes.iter().enumerate() {
            writeln!(w, "{},{},{}", i + 1, e.env_step, e.episode_return)?;
        }
        w.flush()
    }

    /// Inverse of [`LearningCurve::write_evals_csv`].
    pub fn read_evals_csv<R: Read>(r: R) -> Result<Vec<EvalPoint>, csv::Error> {
        csv::Reader::from_reader(r)
            .deserialize::<(usize, f64, f64)>()
            .map(|row| row.map(|(env_step, mean, std)| EvalPoint { env_step, mean, std }))
            .collect()
    }

    /// Inverse of [`LearningCurve::write_episodes_csv`].
    pub fn read_episodes_csv<R: Read>(r: R) -> Result<Vec<EpisodeRecord>, csv::Error> {
        csv::Reader::from_reader(r)
            .deserialize::<(usize, usize, f64)>()
            .map(|row| {
                row.map(|(_, env_step, episode_return)| EpisodeRecord {
                    env_step,
                    episode_return,
                })
            })
            .collect()
    }
}

/// First start seed of the fixed evaluation episodes for a training seed.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(0xe7a1)
}
