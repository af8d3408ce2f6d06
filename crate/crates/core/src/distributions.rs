//! Two-component gamma mixtures and weighted empirical distributions.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{config, domain, Result};

/// `gamma * Gamma(k1, theta1) + (1 - gamma) * Gamma(k2, theta2)`, with
/// shape/scale parameterization. Component 1 models patrons who alight
/// almost immediately, component 2 the patient ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureGamma {
    pub gamma: f64,
    pub k1: f64,
    pub theta1: f64,
    pub k2: f64,
    pub theta2: f64,
}

fn gamma_ln_pdf(p: f64, k: f64, theta: f64, ln_norm: f64) -> f64 {
    if p == 0.0 {
        return match k.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => -theta.ln(),
            _ => f64::NEG_INFINITY,
        };
    }
    (k - 1.0) * p.ln() - p / theta - ln_norm
}

impl MixtureGamma {
    pub fn new(gamma: f64, k1: f64, theta1: f64, k2: f64, theta2: f64) -> Result<Self> {
        let m = Self {
            gamma,
            k1,
            theta1,
            k2,
            theta2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(domain(format!("mixture weight {} outside [0, 1]", self.gamma)));
        }
        for (name, v) in [
            ("k1", self.k1),
            ("theta1", self.theta1),
            ("k2", self.k2),
            ("theta2", self.theta2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.gamma * self.k1 * self.theta1 + (1.0 - self.gamma) * self.k2 * self.theta2
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.k1 * self.theta1;
        let m2 = self.k2 * self.theta2;
        let s1 = self.k1 * self.theta1 * self.theta1 + m1 * m1;
        let s2 = self.k2 * self.theta2 * self.theta2 + m2 * m2;
        let m = self.mean();
        self.gamma * s1 + (1.0 - self.gamma) * s2 - m * m
    }

    /// Whether the impatient component has both the smaller mean and the
    /// smaller variance, the pattern fitted patience models show.
    pub fn has_impatient_first_pattern(&self) -> bool {
        self.k1 * self.theta1 < self.k2 * self.theta2
            && self.k1 * self.theta1 * self.theta1 < self.k2 * self.theta2 * self.theta2
    }

    /// Relabels components so component 1 has the smaller mean.
    pub fn canonical(self) -> Self {
        if self.k1 * self.theta1 <= self.k2 * self.theta2 {
            self
        } else {
            Self {
                gamma: 1.0 - self.gamma,
                k1: self.k2,
                theta1: self.theta2,
                k2: self.k1,
                theta2: self.theta1,
            }
        }
    }

    pub(crate) fn kernel(&self) -> MixtureKernel {
        MixtureKernel {
            params: *self,
            ln_norm1: self.k1 * self.theta1.ln() + ln_gamma(self.k1),
            ln_norm2: self.k2 * self.theta2.ln() + ln_gamma(self.k2),
        }
    }

    pub fn pdf(&self, p: f64) -> Result<f64> {
        self.validate()?;
        check_time(p)?;
        Ok(self.kernel().ln_pdf(p).exp())
    }

    pub fn cdf(&self, p: f64) -> Result<f64> {
        self.validate()?;
        check_time(p)?;
        Ok(self.kernel().cdf(p))
    }

    /// Draws one patience value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (k, theta) = if rng.random::<f64>() < self.gamma {
            (self.k1, self.theta1)
        } else {
            (self.k2, self.theta2)
        };
        Gamma::new(k, theta)
            .expect("validated gamma parameters")
            .sample(rng)
    }
}

fn check_time(p: f64) -> Result<()> {
    if p >= 0.0 && !p.is_nan() {
        Ok(())
    } else {
        Err(domain(format!("time {p} must be non-negative")))
    }
}

/// Mixture with the normalizing constants precomputed, for repeated
/// evaluation inside the likelihood.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixtureKernel {
    params: MixtureGamma,
    ln_norm1: f64,
    ln_norm2: f64,
}

impl MixtureKernel {
    pub(crate) fn ln_pdf(&self, p: f64) -> f64 {
        let m = &self.params;
        let a = if m.gamma > 0.0 {
            m.gamma.ln() + gamma_ln_pdf(p, m.k1, m.theta1, self.ln_norm1)
        } else {
            f64::NEG_INFINITY
        };
        let b = if m.gamma < 1.0 {
            (1.0 - m.gamma).ln() + gamma_ln_pdf(p, m.k2, m.theta2, self.ln_norm2)
        } else {
            f64::NEG_INFINITY
        };
        log_add_exp(a, b)
    }

    pub(crate) fn cdf(&self, p: f64) -> f64 {
        let m = &self.params;
        if p == 0.0 {
            return 0.0;
        }
        if p.is_infinite() {
            return 1.0;
        }
        m.gamma * gamma_lr(m.k1, p / m.theta1) + (1.0 - m.gamma) * gamma_lr(m.k2, p / m.theta2)
    }

    /// `1 - cdf(p)`, computed from the upper incomplete gamma directly.
    pub(crate) fn survival(&self, p: f64) -> f64 {
        let m = &self.params;
        if p == 0.0 {
            return 1.0;
        }
        if p.is_infinite() {
            return 0.0;
        }
        m.gamma * gamma_ur(m.k1, p / m.theta1) + (1.0 - m.gamma) * gamma_ur(m.k2, p / m.theta2)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    if m == f64::INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Discrete distribution over observed values, sampled by inverting the
/// cumulative weights. Every draw is a support value plus `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmpiricalSpec", into = "EmpiricalSpec")]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    cumulative: Vec<f64>,
    weights: Option<Vec<f64>>,
    offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmpiricalSpec {
    samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    offset: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl TryFrom<EmpiricalSpec> for EmpiricalDistribution {
    type Error = crate::error::Error;
    fn try_from(s: EmpiricalSpec) -> Result<Self> {
        match s.weights {
            Some(w) => Self::weighted(s.samples, w, s.offset),
            None => Self::new(s.samples, s.offset),
        }
    }
}

impl From<EmpiricalDistribution> for EmpiricalSpec {
    fn from(d: EmpiricalDistribution) -> Self {
        EmpiricalSpec {
            samples: d.values,
            weights: d.weights,
            offset: d.offset,
        }
    }
}

impl EmpiricalDistribution {
    /// Equal-weight distribution over `samples`.
    pub fn new(samples: Vec<f64>, offset: f64) -> Result<Self> {
        let n = samples.len();
        Self::build(samples, vec![1.0; n], None, offset)
    }

    pub fn weighted(samples: Vec<f64>, weights: Vec<f64>, offset: f64) -> Result<Self> {
        if weights.len() != samples.len() {
            return Err(config("empirical distribution: one weight per sample required"));
        }
        Self::build(samples, weights.clone(), Some(weights), offset)
    }

    fn build(
        mut samples: Vec<f64>,
        weights: Vec<f64>,
        keep: Option<Vec<f64>>,
        offset: f64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(config("empirical distribution needs at least one sample"));
        }
        if samples.iter().chain(&weights).any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(config("empirical distribution values must be finite"));
        }
        if weights.iter().any(|&w| w < 0.0) || weights.iter().all(|&w| w == 0.0) {
            return Err(config("empirical weights must be non-negative with positive total"));
        }
        let mut pairs: Vec<(f64, f64)> = samples.drain(..).zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(pairs.len());
        for &(_, w) in &pairs {
            acc += w / total;
            cumulative.push(acc);
        }
        let values = pairs.iter().map(|p| p.0).collect();
        let weights = keep.map(|_| pairs.iter().map(|p| p.1).collect());
        Ok(Self {
            values,
            cumulative,
            weights,
            offset,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn min(&self) -> f64 {
        self.values[0] + self.offset
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1] + self.offset
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut m = 0.0;
        for (v, c) in self.values.iter().zip(&self.cumulative) {
            m += v * (c - prev);
            prev = *c;
        }
        m + self.offset
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.values.len() - 1);
        self.values[idx] + self.offset
    }
}
