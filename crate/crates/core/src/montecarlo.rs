//! Seeded Monte Carlo replication of a scenario.
//!
//! Run `i` is simulated with seed `derive_seed(base_seed, i)`. Runs are
//! executed in parallel but folded in index order, so the aggregate is the
//! same however the runs were scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::engine::{derive_seed, run_simulation, RunResult};
use crate::error::{domain, Result};
use crate::metrics::{run_outflow, MetricsOptions, MetricsReport};

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Sample standard deviation; 0 for fewer than two values.
    pub fn sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sd() / (self.n as f64).sqrt()
        }
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: u64,
    pub seed: u64,
    pub outflow: f64,
    /// NaN when no counted taxi exited.
    pub mean_travel_time: f64,
    pub exits: u64,
    pub forced_stops: u64,
    pub mean_dropoff_location: f64,
    /// Fraction of post-warmup time the entry queue was nonempty.
    pub queue_busy_fraction: f64,
}

/// Running statistics after each run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub runs: u64,
    pub travel_time_mean: f64,
    pub travel_time_sd: f64,
    pub travel_time_se: f64,
    pub outflow_mean: f64,
    pub outflow_sd: f64,
    pub outflow_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub base_seed: u64,
    pub runs: Vec<RunSummary>,
    pub convergence: Vec<ConvergencePoint>,
    pub travel_time: RunningStats,
    pub outflow: RunningStats,
    pub report: MetricsReport,
}

impl MonteCarloResult {
    pub fn last(&self) -> Option<&ConvergencePoint> {
        self.convergence.last()
    }
}

/// Segment edges used for forced-stop tables: the patience segments
/// closed by the lane ends.
pub fn default_edges(config: &ScenarioConfig) -> Vec<f64> {
    let mut e = vec![0.0];
    e.extend(
        config
            .behavior
            .patience
            .segment_boundaries
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < config.lane.length),
    );
    e.push(config.lane.length);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

pub fn run_monte_carlo(config: &ScenarioConfig, n_runs: u64, base_seed: u64) -> Result<MonteCarloResult> {
    run_monte_carlo_with(config, n_runs, base_seed, Execution::Parallel, MetricsOptions::default())
}

pub fn run_monte_carlo_with(
    config: &ScenarioConfig,
    n_runs: u64,
    base_seed: u64,
    execution: Execution,
    opts: MetricsOptions,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(domain("need at least one run"));
    }
    config.validate()?;
    let edges = default_edges(config);
    let one = |i: u64| -> Result<(RunSummary, MetricsReport)> {
        let seed = derive_seed(base_seed, i);
        let run = run_simulation(config, seed)?;
        let report = MetricsReport::from_run(&run, &edges, opts)?;
        Ok((summarize(i, &run, &report), report))
    };
    let results: Vec<Result<(RunSummary, MetricsReport)>> = match execution {
        Execution::Parallel => (0..n_runs).into_par_iter().map(one).collect(),
        Execution::Sequential => (0..n_runs).map(one).collect(),
    };

    let mut runs = Vec::with_capacity(n_runs as usize);
    let mut convergence = Vec::with_capacity(n_runs as usize);
    let mut tt = RunningStats::default();
    let mut of = RunningStats::default();
    let mut report: Option<MetricsReport> = None;
    for r in results {
        let (summary, rep) = r?;
        if summary.mean_travel_time.is_finite() {
            tt.push(summary.mean_travel_time);
        }
        of.push(summary.outflow);
        convergence.push(ConvergencePoint {
            runs: summary.index + 1,
            travel_time_mean: tt.mean,
            travel_time_sd: tt.sd(),
            travel_time_se: tt.se(),
            outflow_mean: of.mean,
            outflow_sd: of.sd(),
            outflow_se: of.se(),
        });
        match report.as_mut() {
            Some(acc) => acc.merge(&rep)?,
            None => report = Some(rep),
        }
        runs.push(summary);
    }
    Ok(MonteCarloResult {
        base_seed,
        runs,
        convergence,
        travel_time: tt,
        outflow: of,
        report: report.ok_or_else(|| domain("no runs"))?,
    })
}

fn summarize(index: u64, run: &RunResult, report: &MetricsReport) -> RunSummary {
    RunSummary {
        index,
        seed: run.seed,
        outflow: run_outflow(run),
        mean_travel_time: report.travel_time.mean().unwrap_or(f64::NAN),
        exits: report.exits,
        forced_stops: report.forced_stops.total(),
        mean_dropoff_location: report.dropoff_location.mean().unwrap_or(f64::NAN),
        queue_busy_fraction: run.queue_nonempty_time / (run.horizon - run.warmup),
    }
}
