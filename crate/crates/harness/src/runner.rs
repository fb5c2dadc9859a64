//! Seeded experiment runs and their on-disk layout.
//!
//! A results directory holds `config.toml` (the resolved config), one set of
//! `seed<N>_*.csv` files per seed and `summary.csv`. Everything except
//! `summary.csv`, which carries wall-clock times, is a pure function of the
//! config and the seed.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use nnrl::agent_nnac::NnacAgent;
use nnrl::agent_soft::SoftAgent;
use nnrl::agent_ucrl::{RegretLedger, UcrlFaAgent};
use nnrl::baseline::BaseAlgo;
use nnrl::envs::{
    dp_optimal_values, Action, CartPole, DeterministicMdp, LiftedEnv, LipschitzChain, Reacher1d,
};
use nnrl::eval::{eval_seed, evaluate, EpisodeRecord, EvalPoint, LearningCurve};
use nnrl::metric_space::make_lift;
use nnrl::neural::Mlp;

use crate::config::{AgentKind, Budget, EnvSection, ExperimentConfig};
use crate::error::HarnessError;

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub curve: LearningCurve,
    /// Per-episode regret against the oracle (UCRL-FA only).
    pub ledger: Option<RegretLedger>,
    /// Behavior actions in order, for finite-action agents.
    pub actions: Vec<usize>,
    /// Final policy network (NNAC policy or soft actor).
    pub policy: Option<Mlp>,
    pub wall_clock_s: f64,
    pub config_hash: String,
}

/// Run every seed of `cfg` on its own thread; results come back in seed order.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, HarnessError> {
    let hash = cfg.hash()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let hash = hash.clone();
                scope.spawn(move || run_seed(cfg, seed, hash))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    })
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, config_hash: String) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    let mut r = match &cfg.env {
        EnvSection::Cartpole { horizon, continuous } => {
            let env = CartPole {
                horizon: *horizon,
                continuous: *continuous,
                ..CartPole::default()
            };
            let h = *horizon as f64;
            with_lift(cfg, env, seed, Some(&move |_: &_| h))?
        }
        EnvSection::Chain {
            step,
            horizon,
            peak,
            start_cells,
        } => {
            let env = LipschitzChain {
                step: *step,
                horizon: *horizon,
                peak: *peak,
                start_cells: *start_cells,
            };
            let table = dp_optimal_values(&env, cfg.ucrl.oracle_grid)?;
            with_lift(cfg, env, seed, Some(&move |s: &f64| table.value(0, *s)))?
        }
        EnvSection::Reacher1d {
            dt,
            horizon,
            target,
            start_spread,
        } => {
            let env = Reacher1d {
                dt: *dt,
                horizon: *horizon,
                target: *target,
                start_spread: *start_spread,
            };
            with_lift(cfg, env, seed, None)?
        }
    };
    r.seed = seed;
    r.config_hash = config_hash;
    r.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(r)
}

type Oracle<'a, S> = Option<&'a dyn Fn(&S) -> f64>;

fn with_lift<E: DeterministicMdp>(
    cfg: &ExperimentConfig,
    env: E,
    seed: u64,
    oracle: Oracle<'_, E::State>,
) -> Result<RunResult, HarnessError> {
    match &cfg.lift {
        None => run_agent(cfg, &env, seed, oracle),
        Some(l) => {
            let map = make_lift(env.obs_dim(), l.target_dim, l.scale, l.seed)?;
            let lifted = LiftedEnv::new(env, map)?;
            run_agent(cfg, &lifted, seed, oracle)
        }
    }
}

fn run_agent<E: DeterministicMdp>(
    cfg: &ExperimentConfig,
    env: &E,
    seed: u64,
    oracle: Oracle<'_, E::State>,
) -> Result<RunResult, HarnessError> {
    let mut out = RunResult {
        seed,
        curve: LearningCurve::default(),
        ledger: None,
        actions: Vec::new(),
        policy: None,
        wall_clock_s: 0.0,
        config_hash: String::new(),
    };
    match cfg.agent {
        AgentKind::UcrlFa => {
            let Budget::Episodes(k) = cfg.budget else {
                unreachable!("validated config")
            };
            run_ucrl(cfg, env, seed, k, oracle, &mut out)?;
        }
        AgentKind::Nnac => {
            let Budget::Steps(n) = cfg.budget else {
                unreachable!("validated config")
            };
            let mut agent = NnacAgent::new(env, cfg.nnac.to_core(cfg.eval_every, cfg.eval_episodes, seed))?;
            out.curve = agent.train(env, n)?;
            out.actions = std::mem::take(&mut agent.action_log);
            out.policy = Some(agent.policy().clone());
        }
        AgentKind::SoftDdpg | AgentKind::SoftTd3 => {
            let algo = if cfg.agent == AgentKind::SoftDdpg {
                BaseAlgo::DdpgLite
            } else {
                BaseAlgo::Td3Lite
            };
            let lite = cfg.lite.to_core(algo, cfg.eval_every, cfg.eval_episodes, seed);
            let mut agent = SoftAgent::new(env, lite, cfg.soft.to_core())?;
            out.curve = match cfg.budget {
                Budget::Steps(n) => agent.train(env, n)?,
                Budget::Episodes(k) => agent.train_episodes(env, k)?,
            };
            out.policy = Some(agent.nets.actor.clone());
        }
    }
    Ok(out)
}

/// Episode `k` of seed `seed` starts from `reset(ucrl_episode_seed(seed, k))`.
pub fn ucrl_episode_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64)
}

fn run_ucrl<E: DeterministicMdp>(
    cfg: &ExperimentConfig,
    env: &E,
    seed: u64,
    episodes: usize,
    oracle: Oracle<'_, E::State>,
    out: &mut RunResult,
) -> Result<(), HarnessError> {
    let core = cfg.ucrl.to_core(env.obs_dim(), env.action_space().dim())?;
    let mut agent = UcrlFaAgent::new(env, core)?;
    let mut ledger = RegretLedger::default();
    let mut steps = 0;
    let mut next_eval = cfg.eval_every;
    for k in 0..episodes {
        let s0 = ucrl_episode_seed(seed, k);
        let traj = agent.rollout(env, s0)?;
        let ret: f64 = traj.iter().map(|s| s.reward).sum();
        out.actions.extend(traj.iter().map(|s| s.action));
        steps += traj.len();
        agent.end_episode_update(&traj)?;
        ledger.push(ret, oracle.map(|o| o(&env.reset(s0))));
        out.curve.episodes.push(EpisodeRecord {
            env_step: steps,
            episode_return: ret,
        });
        if cfg.eval_every > 0 && (steps >= next_eval || k + 1 == episodes) {
            let (mean, std) = evaluate(
                &mut |o: &[f64], h: usize| Ok(Action::Discrete(agent.act(o, h)?)),
                env,
                cfg.eval_episodes,
                eval_seed(seed),
            )?;
            out.curve.evals.push(EvalPoint { env_step: steps, mean, std });
            while next_eval <= steps {
                next_eval += cfg.eval_every;
            }
        }
    }
    if oracle.is_some() {
        out.ledger = Some(ledger);
    }
    Ok(())
}

fn seed_file(dir: &Path, seed: u64, what: &str) -> std::path::PathBuf {
    dir.join(format!("seed{seed}_{what}.csv"))
}

/// Write `config.toml`, the per-seed CSVs and `summary.csv` into `dir`.
pub fn write_results(dir: &Path, cfg: &ExperimentConfig, results: &[RunResult]) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.resolved_toml()?)?;
    for r in results {
        write_seed(dir, r)?;
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["seed", "wall_clock_s", "config_hash", "final_eval_mean", "final_regret"])?;
    for r in results {
        let final_eval = r.curve.evals.last().map(|e| e.mean.to_string()).unwrap_or_default();
        let final_regret = r
            .ledger
            .as_ref()
            .and_then(|l| l.final_regret())
            .map(|x| x.to_string())
            .unwrap_or_default();
        w.write_record([
            r.seed.to_string(),
            format!("{:.3}", r.wall_clock_s),
            r.config_hash.clone(),
            final_eval,
            final_regret,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_seed(dir: &Path, r: &RunResult) -> Result<(), HarnessError> {
    r.curve.write_evals_csv(File::create(seed_file(dir, r.seed, "evals"))?)?;
    r.curve.write_episodes_csv(File::create(seed_file(dir, r.seed, "episodes"))?)?;
    if let Some(l) = &r.ledger {
        l.write_csv(File::create(seed_file(dir, r.seed, "regret"))?)?;
    }
    if !r.actions.is_empty() {
        let mut w = csv::Writer::from_path(seed_file(dir, r.seed, "actions"))?;
        w.write_record(["env_step", "action"])?;
        for (i, a) in r.actions.iter().enumerate() {
            w.write_record([(i + 1).to_string(), a.to_string()])?;
        }
        w.flush()?;
    }
    if let Some(p) = &r.policy {
        p.write_checkpoint(File::create(seed_file(dir, r.seed, "policy"))?)?;
    }
    Ok(())
}

/// Per-seed records read back from a results directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRecords {
    pub seed: u64,
    pub evals: Vec<EvalPoint>,
    pub episodes: Vec<EpisodeRecord>,
    pub ledger: Option<RegretLedger>,
    pub actions: Vec<usize>,
}

/// Load `config.toml` and every seed listed in it.
pub fn load_results(dir: &Path) -> Result<(ExperimentConfig, Vec<SeedRecords>), HarnessError> {
    let cfg = ExperimentConfig::from_file(&dir.join("config.toml"))?;
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let evals = LearningCurve::read_evals_csv(File::open(seed_file(dir, seed, "evals"))?)?;
        let episodes = LearningCurve::read_episodes_csv(File::open(seed_file(dir, seed, "episodes"))?)?;
        let regret_path = seed_file(dir, seed, "regret");
        let ledger = if regret_path.exists() {
            Some(RegretLedger::read_csv(File::open(regret_path)?)?)
        } else {
            None
        };
        let actions_path = seed_file(dir, seed, "actions");
        let actions = if actions_path.exists() {
            let mut rdr = csv::Reader::from_path(actions_path)?;
            rdr.deserialize::<(usize, usize)>()
                .map(|row| row.map(|(_, a)| a))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        out.push(SeedRecords {
            seed,
            evals,
            episodes,
            ledger,
            actions,
        });
    }
    Ok((cfg, out))
}
