#![allow(dead_code)]

use curbside::config::ScenarioConfig;
use curbside::control::PolicySpec;
use curbside::distributions::EmpiricalDistribution;
use curbside::engine::TaxiState;

pub fn point(v: f64) -> EmpiricalDistribution {
    EmpiricalDistribution::new(vec![v], 0.0).unwrap()
}

/// April-25 preset at the given demand and policy.
pub fn april(demand: f64, policy: PolicySpec) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset("april25").unwrap();
    c.demand_rate = demand;
    c.policy = policy;
    c
}

/// Tracks lane safety across ticks: spacing, order and monotone motion.
#[derive(Default)]
pub struct SafetyMonitor {
    pub last: std::collections::HashMap<u64, f64>,
    pub spacing_violations: u64,
    pub overtakes: u64,
    pub reversals: u64,
    pub ticks: u64,
    pub jam: f64,
}

impl SafetyMonitor {
    pub fn new(jam: f64) -> Self {
        Self {
            jam,
            ..Default::default()
        }
    }

    pub fn observe(&mut self, lane: &[TaxiState]) {
        self.ticks += 1;
        for pair in lane.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            // entry order is id order; the front of the vector is downstream
            if !(a.vehicle.id < b.vehicle.id) || !(a.position() > b.position()) {
                self.overtakes += 1;
            }
            if a.position() - b.position() < self.jam - 1e-9 {
                self.spacing_violations += 1;
            }
        }
        let mut now = std::collections::HashMap::with_capacity(lane.len());
        for t in lane {
            if let Some(&x0) = self.last.get(&t.vehicle.id) {
                if t.position() < x0 {
                    self.reversals += 1;
                }
            }
            now.insert(t.vehicle.id, t.position());
        }
        self.last = now;
    }
}

use curbside::estimation::ForcedStopObservation;
use curbside::MixtureGamma;
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Patience draws censored by an independent exponential stop length:
/// the patron alights when patience runs out before the obstruction clears.
pub fn censored_sample<R: Rng>(m: &MixtureGamma, n: usize, mean_stop: f64, rng: &mut R) -> Vec<ForcedStopObservation> {
    let stop = Exp::new(1.0 / mean_stop).unwrap();
    (0..n)
        .map(|_| {
            let p = m.sample(rng);
            let d = stop.sample(rng);
            ForcedStopObservation {
                location: rng.random_range(0.0..240.0),
                wait: p.min(d),
                discharged: p <= d,
                instance: 1,
            }
        })
        .collect()
}

/// Minimum within-segment squared error over every way of cutting the
/// location-sorted sample into `k` contiguous nonempty groups at
/// distinct locations.
pub fn brute_force_partition(obs: &[(f64, f64)], k: usize) -> Option<f64> {
    let mut o = obs.to_vec();
    o.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = o.len();
    let cuts: Vec<usize> = (1..n).filter(|&i| o[i - 1].0 < o[i].0).collect();
    if cuts.len() + 1 < k {
        return None;
    }
    let sse = |s: &[(f64, f64)]| {
        let m = s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
        s.iter().map(|p| (p.1 - m).powi(2)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    // iterate over all subsets of size k-1 of the legal cuts
    let c = cuts.len();
    for mask in 0u32..(1 << c) {
        if mask.count_ones() as usize != k - 1 {
            continue;
        }
        let mut start = 0;
        let mut total = 0.0;
        for (j, &cut) in cuts.iter().enumerate() {
            if mask & (1 << j) != 0 {
                total += sse(&o[start..cut]);
                start = cut;
            }
        }
        total += sse(&o[start..]);
        best = best.min(total);
    }
    Some(best)
}

use curbside::georef::{project, rotation_matrix, CameraExtrinsics, CameraIntrinsics, Correspondence};
use nalgebra::{Matrix3, Vector3};

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(1400.0, 1380.0, 960.0, 540.0).unwrap()
}

/// A roadside camera `height` m up at `(x, _, z)`, aimed at a point on
/// the road ahead and rolled by `roll`.
pub fn look_at_camera(x: f64, height: f64, z: f64, target: [f64; 2], roll: f64) -> CameraExtrinsics {
    let c = Vector3::new(x, height, z);
    let f = (Vector3::new(target[0], 0.0, target[1]) - c).normalize();
    let right0 = f.cross(&Vector3::y()).normalize();
    let down0 = f.cross(&right0);
    let (s, co) = roll.sin_cos();
    let right = right0 * co + down0 * s;
    let down = down0 * co - right0 * s;
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), f.transpose()]);
    // R = R1(θ) R2(ψ) R3(ω): R02 = -sin ψ, R01/R00 = tan ω, R12/R22 = tan θ
    let psi = (-r[(0, 2)]).asin();
    let omega = r[(0, 1)].atan2(r[(0, 0)]);
    let theta = r[(1, 2)].atan2(r[(2, 2)]);
    assert!((rotation_matrix(theta, psi, omega) - r).abs().max() < 1e-12);
    let t = -(r * c);
    CameraExtrinsics {
        theta,
        psi,
        omega,
        translation: [t.x, t.y, t.z],
    }
}

pub fn random_camera<R: Rng>(rng: &mut R) -> CameraExtrinsics {
    look_at_camera(
        rng.random_range(-4.0..4.0),
        rng.random_range(4.0..12.0),
        rng.random_range(-25.0..0.0),
        [rng.random_range(-2.0..2.0), rng.random_range(25.0..60.0)],
        rng.random_range(-0.1..0.1),
    )
}

/// `n` road points that land inside a 1920x1080 image.
pub fn visible_ground_points<R: Rng>(
    a: &CameraIntrinsics,
    e: &CameraExtrinsics,
    n: usize,
    rng: &mut R,
) -> Vec<Correspondence> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = [rng.random_range(-6.0..6.0), 0.0, rng.random_range(0.0..120.0)];
        if let Ok(px) = project(a, e, w) {
            if (0.0..1920.0).contains(&px[0]) && (0.0..1080.0).contains(&px[1]) {
                out.push(Correspondence { pixel: px, world: w });
            }
        }
    }
    out
}

pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Squared-error objective of cutting the location-sorted sample into
/// groups of the given sizes.
pub fn partition_cost(obs: &[(f64, f64)], counts: &[usize]) -> f64 {
    let mut o = obs.to_vec();
    o.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut start = 0;
    let mut total = 0.0;
    for &c in counts {
        let s = &o[start..start + c];
        let m = s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
        total += s.iter().map(|p| (p.1 - m).powi(2)).sum::<f64>();
        start += c;
    }
    total
}

/// The April preset's police batching policy.
pub fn batching() -> PolicySpec {
    ScenarioConfig::preset("april25").unwrap().policy
}
