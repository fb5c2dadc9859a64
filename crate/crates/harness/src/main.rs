use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nnrl::baseline::ActionScale;
use nnrl::envs::{Action, CartPole, DeterministicMdp, LipschitzChain, Reacher1d};
use nnrl::eval::evaluate;
use nnrl::metric_space::{check_cover_pack_chain, greedy_cover, PointCloud, MAX_EXACT_POINTS};
use nnrl::neural::{Head, Mlp};
use nnrl_harness::{report, runner, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "nnrl", version, about = "Run and analyze nearest-neighbor RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write CSV results.
    Run {
        config: PathBuf,
        /// Results directory.
        #[arg(long, env = "NNRL_OUT_DIR", default_value = "results")]
        out: PathBuf,
    },
    /// Greedy evaluation of a saved policy checkpoint.
    Eval {
        checkpoint: PathBuf,
        env: EnvName,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regret fits, bound checks and smoothed curves for a results directory.
    Analyze {
        dir: PathBuf,
        /// Cover radius for the regret bound check.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Covering and packing numbers of a point cloud CSV.
    Geometry {
        cloud: PathBuf,
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    Cartpole,
    CartpoleContinuous,
    Chain,
    Reacher1d,
}

fn eval_checkpoint<E: DeterministicMdp>(net: &Mlp, env: &E, episodes: usize, seed: u64) -> Result<(f64, f64), HarnessError> {
    let space = env.action_space();
    let r = match net.head() {
        Head::Softmax => evaluate(
            &mut |o: &[f64], _h: usize| Ok(Action::Discrete(net.mode(o)?)),
            env,
            episodes,
            seed,
        )?,
        Head::Identity => {
            let scale = ActionScale::from_space(&space)?;
            evaluate(
                &mut |o: &[f64], _h: usize| {
                    let mut a = scale.apply(&net.forward(o)?);
                    scale.clip(&mut a);
                    Ok(Action::Continuous(a))
                },
                env,
                episodes,
                seed,
            )?
        }
    };
    Ok(r)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let results = runner::run(&cfg)?;
            runner::write_results(&out, &cfg, &results)?;
            println!("seed,wall_clock_s,final_eval_mean");
            for r in &results {
                let last = r.curve.evals.last().map(|e| e.mean.to_string()).unwrap_or_default();
                println!("{},{:.3},{}", r.seed, r.wall_clock_s, last);
            }
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let net = Mlp::read_checkpoint(File::open(checkpoint)?)?;
            let (mean, std) = match env {
                EnvName::Cartpole => eval_checkpoint(&net, &CartPole::default(), episodes, seed)?,
                EnvName::CartpoleContinuous => eval_checkpoint(&net, &CartPole::continuous(), episodes, seed)?,
                EnvName::Chain => eval_checkpoint(&net, &LipschitzChain::default(), episodes, seed)?,
                EnvName::Reacher1d => eval_checkpoint(&net, &Reacher1d::default(), episodes, seed)?,
            };
            println!("episodes,eval_return_mean,eval_return_std");
            println!("{episodes},{mean},{std}");
        }
        Command::Analyze { dir, eps } => {
            let rows = report::analyze(&dir, eps)?;
            println!("seed,quantity,value,note");
            for r in rows {
                println!("{},{},{},{}", r.seed, r.quantity, r.value, r.note);
            }
        }
        Command::Geometry { cloud, eps } => {
            let cloud = PointCloud::read_csv(File::open(cloud)?, None)?;
            let greedy = greedy_cover(&cloud, eps)?.len();
            println!("points,eps,greedy_cover,covering_eps,packing_eps,packing_2eps,chain_holds");
            if cloud.len() <= MAX_EXACT_POINTS {
                let r = check_cover_pack_chain(&cloud, eps)?;
                println!(
                    "{},{eps},{greedy},{},{},{},{}",
                    cloud.len(),
                    r.covering_eps,
                    r.packing_eps,
                    r.packing_2eps,
                    r.holds
                );
            } else {
                println!("{},{eps},{greedy},,,,", cloud.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
