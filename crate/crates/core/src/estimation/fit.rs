use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::log_likelihood_unchecked;
use super::nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
use super::ForcedStopObservation;
use crate::distributions::{EmpiricalDistribution, MixtureGamma};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub simplex: NelderMeadOptions,
    /// Run the starts on the rayon pool. The result is the same either way.
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            simplex: NelderMeadOptions::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    /// Best parameters, relabeled so component 1 has the smaller mean.
    pub params: MixtureGamma,
    pub log_likelihood: f64,
    /// Index of the winning start.
    pub start_index: usize,
    /// Log-likelihood at each start point.
    pub start_log_likelihoods: Vec<f64>,
    pub evaluations: usize,
}

const MIN_OBSERVATIONS: usize = 20;
// keeps the incomplete gamma evaluations in a sane range
const LN_LIMIT: f64 = 18.0;

fn to_params(z: &[f64]) -> Option<MixtureGamma> {
    if z[1..].iter().any(|v| v.abs() > LN_LIMIT) || !z.iter().all(|v| v.is_finite()) {
        return None;
    }
    let gamma = 1.0 / (1.0 + (-z[0]).exp());
    let m = MixtureGamma {
        gamma,
        k1: z[1].exp(),
        theta1: z[2].exp(),
        k2: z[3].exp(),
        theta2: z[4].exp(),
    };
    m.validate().ok().map(|_| m)
}

fn to_z(m: &MixtureGamma) -> Vec<f64> {
    vec![
        (m.gamma / (1.0 - m.gamma)).ln(),
        m.k1.ln(),
        m.theta1.ln(),
        m.k2.ln(),
        m.theta2.ln(),
    ]
}

/// The 16 start points: every combination of two weights, two impatient
/// shapes, two impatient means and two patient means, scaled by the mean
/// observed wait.
fn starts(mean_wait: f64) -> Vec<MixtureGamma> {
    let mut out = Vec::with_capacity(16);
    for gamma in [0.3, 0.6] {
        for k1 in [0.8, 3.0] {
            for m1 in [0.02, 0.2] {
                for m2 in [1.0, 2.5] {
                    let k2 = 2.0;
                    out.push(MixtureGamma {
                        gamma,
                        k1,
                        theta1: m1 * mean_wait / k1,
                        k2,
                        theta2: m2 * mean_wait / k2,
                    });
                }
            }
        }
    }
    out
}

/// Maximum-likelihood mixture fit to censored forced waits by multi-start
/// Nelder–Mead over log shapes/scales and logit weight.
pub fn fit_mixture_gamma(observations: &[ForcedStopObservation], opts: FitOptions) -> Result<MixtureFit> {
    if observations.len() < MIN_OBSERVATIONS {
        return Err(Error::Estimation(format!(
            "need at least {MIN_OBSERVATIONS} observations, got {}",
            observations.len()
        )));
    }
    if !observations.iter().any(|o| o.discharged) {
        return Err(Error::Estimation("no uncensored observation (every wait censored)".into()));
    }
    if observations.iter().any(|o| !(o.wait >= 0.0) || !o.wait.is_finite()) {
        return Err(Error::Estimation("forced waits must be finite and non-negative".into()));
    }
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| {
        a.wait
            .total_cmp(&b.wait)
            .then(a.discharged.cmp(&b.discharged))
            .then(a.location.total_cmp(&b.location))
            .then(a.instance.cmp(&b.instance))
    });
    let mean_wait = (obs.iter().map(|o| o.wait).sum::<f64>() / obs.len() as f64).max(1e-3);
    let objective = |z: &[f64]| match to_params(z) {
        Some(m) => -log_likelihood_unchecked(&m, &obs),
        None => f64::INFINITY,
    };
    let points = starts(mean_wait);
    let run = |m: &MixtureGamma| -> (f64, NelderMeadResult) {
        let z0 = to_z(m);
        (-objective(&z0), nelder_mead(objective, &z0, opts.simplex))
    };
    let results: Vec<(f64, NelderMeadResult)> = if opts.parallel {
        points.par_iter().map(run).collect()
    } else {
        points.iter().map(run).collect()
    };

    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        // strict improvement only: the lowest index wins ties
        if r.1.value < results[best].1.value {
            best = i;
        }
    }
    let evaluations = results.iter().map(|r| r.1.evaluations).sum();
    let winner = &results[best].1;
    let params = to_params(&winner.x)
        .ok_or_else(|| Error::Estimation("optimizer left the parameter domain".into()))?
        .canonical();
    let log_likelihood = -winner.value;
    if !winner.converged {
        return Err(Error::NotConverged {
            best: params,
            best_log_likelihood: log_likelihood,
            evaluations,
        });
    }
    Ok(MixtureFit {
        params,
        log_likelihood,
        start_index: best,
        start_log_likelihoods: results.iter().map(|r| r.0).collect(),
        evaluations,
    })
}

/// Empirical distribution of observed values, shifted by `offset`.
pub fn fit_empirical(samples: &[f64], offset: f64) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(samples.to_vec(), offset)
}
