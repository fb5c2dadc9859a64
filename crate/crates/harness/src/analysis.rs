//! Curve smoothing, regret fits, the regret bound check and paired-run
//! speed ratios.

use nnrl::eval::EvalPoint;
use nnrl::metric_space::{covering_number, greedy_cover, PointCloud, MAX_EXACT_POINTS};

use crate::error::HarnessError;

/// Trailing moving average over `window` points; the first `window - 1`
/// outputs average the points available so far.
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "smoothing window must be >= 1");
    let mut out = Vec::with_capacity(curve.len());
    let mut sum = 0.0;
    for (i, v) in curve.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= curve[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Trailing moving average over the points whose step lies in
/// `(step - window, step]`, for curves sampled at uneven steps.
pub fn smooth_by_steps(points: &[(usize, f64)], window: usize) -> Vec<f64> {
    assert!(window >= 1, "smoothing window must be >= 1");
    let mut out = Vec::with_capacity(points.len());
    let mut lo = 0;
    let mut sum = 0.0;
    for (i, &(step, v)) in points.iter().enumerate() {
        sum += v;
        while points[lo].0 + window <= step {
            sum -= points[lo].1;
            lo += 1;
        }
        out.push(sum / (i + 1 - lo) as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    /// Number of `(log K, log Regret)` points used.
    pub points: usize,
}

/// Least-squares slope of `log Regret(K)` against `log K` over the second
/// half of the episodes. `cumulative[k]` is the regret after episode `k + 1`;
/// nonpositive entries are skipped.
pub fn fit_regret_exponent(cumulative: &[f64]) -> Result<ExponentFit, HarnessError> {
    if cumulative.len() < 20 {
        return Err(HarnessError::Analysis(format!(
            "exponent fit needs at least 20 episodes, got {}",
            cumulative.len()
        )));
    }
    let start = cumulative.len() / 2;
    let pts: Vec<(f64, f64)> = cumulative
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, r)| **r > 0.0)
        .map(|(k, r)| (((k + 1) as f64).ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(HarnessError::Analysis("too few positive regret values in the tail".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        residual,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub regret: f64,
    pub covering: usize,
    /// `false` when `covering` is a greedy upper bound rather than exact.
    pub covering_exact: bool,
    pub bound: f64,
    pub holds: bool,
}

/// `N(eps)` of `cloud`: exact when the cloud is small enough for exhaustive
/// search, otherwise the size of a greedy cover (an upper bound).
pub fn covering_estimate(cloud: &PointCloud, eps: f64) -> Result<(usize, bool), HarnessError> {
    if cloud.len() <= MAX_EXACT_POINTS {
        Ok((covering_number(cloud, eps)?, true))
    } else {
        Ok((greedy_cover(cloud, eps)?.len(), false))
    }
}

/// Compare the measured cumulative regret with `H N(eps) + 2 eps L K H`.
pub fn check_regret_bound(
    cumulative_regret: f64,
    cloud: &PointCloud,
    eps: f64,
    lipschitz: f64,
    horizon: usize,
    episodes: usize,
) -> Result<BoundCheck, HarnessError> {
    let (covering, covering_exact) = covering_estimate(cloud, eps)?;
    let h = horizon as f64;
    let bound = h * covering as f64 + 2.0 * eps * lipschitz * episodes as f64 * h;
    Ok(BoundCheck {
        regret: cumulative_regret,
        covering,
        covering_exact,
        bound,
        holds: cumulative_regret <= bound,
    })
}

/// First evaluation step whose mean return reaches `threshold`.
pub fn steps_to_threshold(evals: &[EvalPoint], threshold: f64) -> Option<usize> {
    evals.iter().find(|e| e.mean >= threshold).map(|e| e.env_step)
}

/// Mean of the last `tail` evaluation returns.
pub fn final_return(evals: &[EvalPoint], tail: usize) -> Option<f64> {
    if evals.is_empty() || tail == 0 {
        return None;
    }
    let t = &evals[evals.len().saturating_sub(tail)..];
    Some(t.iter().map(|e| e.mean).sum::<f64>() / t.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSpeed {
    pub final_off: f64,
    pub threshold: f64,
    pub steps_off: Option<usize>,
    pub steps_on: Option<usize>,
    /// `steps_on / steps_off`; infinite when NN-on never reaches the
    /// threshold.
    pub ratio: f64,
}

/// Speed of the NN-on run relative to its NN-off pair: steps each needs to
/// reach `fraction` of NN-off's final return (mean of its last `tail`
/// evaluations).
pub fn paired_speed(off: &[EvalPoint], on: &[EvalPoint], fraction: f64, tail: usize) -> Option<PairedSpeed> {
    let final_off = final_return(off, tail)?;
    let threshold = fraction * final_off;
    let steps_off = steps_to_threshold(off, threshold);
    let steps_on = steps_to_threshold(on, threshold);
    let ratio = match (steps_on, steps_off) {
        (Some(a), Some(b)) => a as f64 / b as f64,
        _ => f64::INFINITY,
    };
    Some(PairedSpeed {
        final_off,
        threshold,
        steps_off,
        steps_on,
        ratio,
    })
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
