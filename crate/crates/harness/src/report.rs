//! The `analyze` report over a results directory.

use std::path::Path;

use nnrl::envs::LipschitzChain;
use nnrl::metric_space::{MetricSpec, Point, PointCloud};

use crate::analysis::{check_regret_bound, final_return, fit_regret_exponent, smooth_by_steps};
use crate::config::{EnvSection, ExperimentConfig};
use crate::error::HarnessError;
use crate::runner::{load_results, SeedRecords};

/// One line of `analysis.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub seed: u64,
    pub quantity: &'static str,
    pub value: f64,
    pub note: String,
}

/// State-action points the chain can visit: every state reachable within the
/// horizon from the start grid, paired with each action displacement.
pub fn chain_cloud(env: &LipschitzChain, state_weight: f64, action_weight: f64) -> Result<PointCloud, HarnessError> {
    let key = |s: f64| (s * 1e9).round() as i64;
    let mut states = env.start_states();
    let mut frontier = states.clone();
    for _ in 1..env.horizon {
        let mut next = Vec::new();
        for &s in &frontier {
            for a in 0..LipschitzChain::ACTIONS {
                let t = env.next_state(s, a);
                if !states.iter().any(|&u| key(u) == key(t)) {
                    states.push(t);
                    next.push(t);
                }
            }
        }
        frontier = next;
    }
    states.sort_by(f64::total_cmp);
    let mut pts = Vec::with_capacity(states.len() * LipschitzChain::ACTIONS);
    for s in states {
        for a in 0..LipschitzChain::ACTIONS {
            pts.push(Point::new(vec![s, env.displacement(a)])?);
        }
    }
    Ok(PointCloud::new(pts, MetricSpec::state_action(1, state_weight, 1, action_weight)?)?)
}

fn chain_of(cfg: &ExperimentConfig) -> Option<LipschitzChain> {
    match cfg.env {
        EnvSection::Chain {
            step,
            horizon,
            peak,
            start_cells,
        } => Some(LipschitzChain {
            step,
            horizon,
            peak,
            start_cells,
        }),
        _ => None,
    }
}

fn seed_rows(cfg: &ExperimentConfig, r: &SeedRecords, eps: f64) -> Result<Vec<ReportRow>, HarnessError> {
    let mut rows = Vec::new();
    let mut push = |quantity, value, note: String| {
        rows.push(ReportRow {
            seed: r.seed,
            quantity,
            value,
            note,
        })
    };
    if let Some(f) = final_return(&r.evals, 1) {
        push("final_eval_mean", f, String::new());
    }
    if !r.episodes.is_empty() {
        let pts: Vec<(usize, f64)> = r.episodes.iter().map(|e| (e.env_step, e.episode_return)).collect();
        let s = smooth_by_steps(&pts, cfg.smoothing_window);
        push(
            "final_smoothed_return",
            *s.last().expect("non-empty"),
            format!("window={}", cfg.smoothing_window),
        );
    }
    if let Some(ledger) = &r.ledger {
        let cum = ledger.cumulative();
        let total = cum.last().copied().unwrap_or(0.0);
        push("cumulative_regret", total, format!("episodes={}", cum.len()));
        match fit_regret_exponent(&cum) {
            Ok(f) => push(
                "regret_exponent",
                f.slope,
                format!("residual={};points={}", f.residual, f.points),
            ),
            Err(e) => push("regret_exponent", f64::NAN, e.to_string()),
        }
        if let Some(chain) = chain_of(cfg) {
            let cloud = chain_cloud(&chain, cfg.ucrl.state_weight, cfg.ucrl.action_weight)?;
            let b = check_regret_bound(total, &cloud, eps, cfg.ucrl.lipschitz, chain.horizon, cum.len())?;
            push(
                "regret_bound",
                b.bound,
                format!(
                    "holds={};regret={};covering={};covering_exact={};eps={}",
                    b.holds, b.regret, b.covering, b.covering_exact, eps
                ),
            );
        }
    }
    Ok(rows)
}

/// Analyze a results directory, writing `analysis.csv` and one
/// `seed<N>_episodes_smoothed.csv` per seed next to the inputs.
pub fn analyze(dir: &Path, eps: f64) -> Result<Vec<ReportRow>, HarnessError> {
    let (cfg, records) = load_results(dir)?;
    let mut rows = Vec::new();
    for r in &records {
        rows.extend(seed_rows(&cfg, r, eps)?);
        let pts: Vec<(usize, f64)> = r.episodes.iter().map(|e| (e.env_step, e.episode_return)).collect();
        let mut w = csv::Writer::from_path(dir.join(format!("seed{}_episodes_smoothed.csv", r.seed)))?;
        w.write_record(["env_step", "return_smoothed"])?;
        for ((step, _), s) in pts.iter().zip(smooth_by_steps(&pts, cfg.smoothing_window)) {
            w.write_record([step.to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("analysis.csv"))?;
    w.write_record(["seed", "quantity", "value", "note"])?;
    for r in &rows {
        w.write_record([r.seed.to_string(), r.quantity.to_string(), r.value.to_string(), r.note.clone()])?;
    }
    w.flush()?;
    Ok(rows)
}
