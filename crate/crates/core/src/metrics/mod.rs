//! Speedup-threshold metrics, leaderboards and the candidate feedback loop.

mod feedback;
mod leaderboard;

use serde::Serialize;
use thiserror::Error;

use crate::trace::{EvalStatus, EvaluationRecord};

pub use feedback::{
    run_feedback_loop, Benchmarker, Candidate, CommandProvider, DirectoryProvider, EngineBenchmarker, IterationSummary,
    LoopError, LoopOptions, LoopResult, ProviderError, SolutionProvider, WorkloadOutcome,
};
pub use leaderboard::{
    aggregate_leaderboard, entries_from_dataset, leaderboard_summary, write_curve_csv, write_leaderboard_csv, EvalEntry,
    LeaderboardRow,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no evaluations to aggregate")]
    EmptyEvalSet,
    #[error("threshold grid must be non-empty and strictly ascending")]
    BadGrid,
}

/// Number of log-spaced thresholds in the standard grid (after the leading 0).
pub const GRID_POINTS: usize = 64;
pub const GRID_MIN: f64 = 0.01;
pub const GRID_MAX: f64 = 4.0;

/// `0` followed by 64 log-spaced thresholds from 0.01 to 4.
pub fn standard_grid() -> Vec<f64> {
    let ratio = GRID_MAX / GRID_MIN;
    let mut g = vec![0.0];
    g.extend((0..GRID_POINTS).map(|k| GRID_MIN * ratio.powf(k as f64 / (GRID_POINTS - 1) as f64)));
    *g.last_mut().expect("non-empty") = GRID_MAX;
    g
}

fn counts(r: &EvaluationRecord, p: f64) -> bool {
    if r.status != EvalStatus::Passed {
        return false;
    }
    // At p = 0 the metric is the plain correctness rate.
    p <= 0.0 || r.speedup().is_some_and(|s| s > p)
}

/// Fraction of records that are correct and more than `p` times faster.
pub fn fast_p<'a, I>(evals: I, p: f64) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = &'a EvaluationRecord>,
{
    let (mut n, mut hit) = (0usize, 0usize);
    for r in evals {
        n += 1;
        hit += usize::from(counts(r, p));
    }
    if n == 0 {
        return Err(MetricsError::EmptyEvalSet);
    }
    Ok(hit as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FastPCurve {
    pub points: Vec<(f64, f64)>,
    /// Exact area under the step function over the grid span.
    pub auc: f64,
}

impl FastPCurve {
    pub fn correctness_rate(&self) -> f64 {
        self.points.first().map_or(0.0, |&(_, v)| v)
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|&(_, v)| v).collect()
    }

    /// Trapezoid-rule area over the sampled points, for comparison with `auc`.
    pub fn trapezoid_auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

fn check_grid(grid: &[f64]) -> Result<(), MetricsError> {
    let ascending = grid.windows(2).all(|w| w[0] < w[1]);
    if grid.is_empty() || !ascending || grid.iter().any(|p| !p.is_finite()) {
        return Err(MetricsError::BadGrid);
    }
    Ok(())
}

/// fast_p at every grid point. The area is integrated exactly: each passing
/// record with speedup `s` contributes `clamp(s, lo, hi) - lo` over `[lo, hi]`.
pub fn fast_p_curve(evals: &[&EvaluationRecord], grid: &[f64]) -> Result<FastPCurve, MetricsError> {
    check_grid(grid)?;
    if evals.is_empty() {
        return Err(MetricsError::EmptyEvalSet);
    }
    let points = grid
        .iter()
        .map(|&p| Ok((p, fast_p(evals.iter().copied(), p)?)))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let area: f64 = evals
        .iter()
        .filter(|r| r.status == EvalStatus::Passed)
        .filter_map(|r| r.speedup())
        .filter(|s| !s.is_nan())
        .map(|s| s.clamp(lo, hi) - lo)
        .sum();
    Ok(FastPCurve {
        points,
        auc: area / evals.len() as f64,
    })
}
