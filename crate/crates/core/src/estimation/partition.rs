use serde::{Deserialize, Serialize};

use super::ForcedStopObservation;
use crate::error::{domain, Result};

/// Contiguous lane segments minimizing the within-segment squared error
/// of forced wait times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePartition {
    pub k: usize,
    /// `[0, b1, ..., b_{k-1}, L]`.
    pub edges: Vec<f64>,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
    /// Sum over segments of squared deviations from the segment mean.
    pub objective: f64,
}

impl LanePartition {
    /// Interior boundaries only.
    pub fn boundaries(&self) -> &[f64] {
        &self.edges[1..self.edges.len() - 1]
    }
}

fn sse(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Exact optimal partition into `k` segments by dynamic programming over
/// the location-sorted observations. Splits fall only between distinct
/// locations, midway between the neighboring observations.
pub fn partition_lane(
    observations: &[ForcedStopObservation],
    k: usize,
    lane_length: f64,
) -> Result<LanePartition> {
    if k == 0 {
        return Err(domain("need at least one segment"));
    }
    let mut obs: Vec<(f64, f64)> = observations.iter().map(|o| (o.location, o.wait)).collect();
    if obs.iter().any(|&(y, t)| !(0.0..=lane_length).contains(&y) || !(t >= 0.0)) {
        return Err(domain("observations must lie in the lane with non-negative waits"));
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = obs.len();
    // legal cut positions: between i-1 and i when locations differ
    let cuttable: Vec<bool> = (0..=n)
        .map(|i| i == 0 || i == n || obs[i - 1].0 < obs[i].0)
        .collect();
    let distinct = cuttable[1..n].iter().filter(|&&c| c).count() + usize::from(n > 0);
    if distinct < k {
        return Err(domain(format!(
            "{k} segments need at least {k} distinct stop locations, found {distinct}"
        )));
    }

    // cost[i][j]: squared error of obs[i..j], accumulated with Welford updates
    let mut cost = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        let (mut m, mut s) = (0.0, 0.0);
        for j in i..n {
            let x = obs[j].1;
            let c = (j - i + 1) as f64;
            let d = x - m;
            m += d / c;
            s += d * (x - m);
            cost[i][j + 1] = s;
        }
    }

    // best[s][j]: minimal cost of obs[..j] in s segments; from[s][j] the last cut
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; n + 1]; k + 1];
    let mut from = vec![vec![0usize; n + 1]; k + 1];
    best[0][0] = 0.0;
    for s in 1..=k {
        for j in 1..=n {
            if !cuttable[j] {
                continue;
            }
            for i in (s - 1)..j {
                if !cuttable[i] || best[s - 1][i] == inf {
                    continue;
                }
                let c = best[s - 1][i] + cost[i][j];
                if c < best[s][j] {
                    best[s][j] = c;
                    from[s][j] = i;
                }
            }
        }
    }

    let mut cuts = vec![n];
    let mut j = n;
    for s in (1..=k).rev() {
        j = from[s][j];
        cuts.push(j);
    }
    cuts.reverse();

    let mut edges = vec![0.0];
    let mut means = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    let mut objective = 0.0;
    for w in cuts.windows(2) {
        let waits: Vec<f64> = obs[w[0]..w[1]].iter().map(|o| o.1).collect();
        means.push(waits.iter().sum::<f64>() / waits.len() as f64);
        counts.push(waits.len());
        objective += sse(&waits);
        if w[1] < n {
            edges.push(0.5 * (obs[w[1] - 1].0 + obs[w[1]].0));
        }
    }
    edges.push(lane_length);
    Ok(LanePartition {
        k,
        edges,
        means,
        counts,
        objective,
    })
}
