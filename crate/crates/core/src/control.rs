//! Lane-entry and drop-off control strategies, and the crosswalk signal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::EmpiricalDistribution;
use crate::error::{config, Result};

/// Release thresholds for one class of batch (primary or secondary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchingParams {
    /// Empty upstream length that triggers a release on its own.
    pub l_m1: f64,
    /// Shorter empty length that suffices once the last taxi has dwelt `t_m`.
    pub l_m2: f64,
    pub t_m: f64,
    /// Empty space left upstream of a batch once its last taxi stops.
    pub l_left: f64,
}

impl BatchingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_m1 > 0.0 && self.l_m2 > 0.0 && self.t_m > 0.0 && self.l_left > 0.0) {
            return Err(config("batching parameters must be positive"));
        }
        if !(self.l_m2 < self.l_m1) {
            return Err(config("batching requires l_m2 < l_m1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Police admit taxis in primary and secondary batches.
    Batching {
        primary: BatchingParams,
        secondary: BatchingParams,
    },
    NoControl,
    /// Past `l0`, a taxi's first forced stop is where it must discharge.
    NoWait { l0: f64 },
    /// The no-wait rule plus: taxis never forced to stop past `l0`
    /// discharge only on reaching `l_h`.
    Downstream { l0: f64, l_h: f64 },
}

impl PolicySpec {
    pub fn validate(&self, lane_length: f64) -> Result<()> {
        let in_lane = |v: f64| (0.0..=lane_length).contains(&v);
        match *self {
            PolicySpec::Batching { primary, secondary } => {
                primary.validate()?;
                secondary.validate()
            }
            PolicySpec::NoControl => Ok(()),
            PolicySpec::NoWait { l0 } if in_lane(l0) => Ok(()),
            PolicySpec::Downstream { l0, l_h } if in_lane(l0) && in_lane(l_h) && l_h >= l0 => {
                Ok(())
            }
            _ => Err(config(format!(
                "policy thresholds out of range for a {lane_length} m lane: {self:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Batching { .. } => "batching",
            PolicySpec::NoControl => "no_control",
            PolicySpec::NoWait { .. } => "no_wait",
            PolicySpec::Downstream { .. } => "downstream",
        }
    }

    pub fn is_batching(&self) -> bool {
        matches!(self, PolicySpec::Batching { .. })
    }

    /// Whether a taxi may discharge when its patience runs out at a forced
    /// stop it is not mandated to discharge at.
    pub fn allows_patience_discharge(&self) -> bool {
        !matches!(self, PolicySpec::Downstream { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Primary,
    Secondary,
}

/// What the release rule needs to know about the lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneSnapshot {
    /// Length from the entrance to the rearmost taxi (whole lane if empty).
    pub empty_upstream: f64,
    /// How long the last taxi of the current batch has been stopped, if it is.
    pub last_taxi_dwell: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseReason {
    /// Rule (i): the empty upstream stretch reached `l_m1`.
    EmptyLength,
    /// Rule (ii): `l_m2` is clear and the last taxi has dwelt `t_m`.
    LongDwell,
}

pub fn batching_decide_release(
    snapshot: LaneSnapshot,
    params: &BatchingParams,
) -> Option<ReleaseReason> {
    if snapshot.empty_upstream >= params.l_m1 {
        Some(ReleaseReason::EmptyLength)
    } else if snapshot.empty_upstream >= params.l_m2
        && snapshot.last_taxi_dwell.is_some_and(|d| d >= params.t_m)
    {
        Some(ReleaseReason::LongDwell)
    } else {
        None
    }
}

/// Taxis that fit in `available` meters once `l_left` is kept clear.
pub fn batch_size(available: f64, l_left: f64, jam_spacing: f64) -> usize {
    let occupied = available - l_left;
    if occupied <= 0.0 {
        return 0;
    }
    (occupied / jam_spacing).floor() as usize
}

/// The view of a taxi a policy rule needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxiView {
    pub position: f64,
    pub is_force_stopped: bool,
    pub has_discharged: bool,
    pub has_request: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mandate {
    None,
    MustDischargeNow,
    /// Voluntary discharge is not allowed before this position.
    DeferUntil(f64),
}

pub fn policy_mandate(policy: &PolicySpec, taxi: TaxiView) -> Mandate {
    if !taxi.has_request || taxi.has_discharged {
        return Mandate::None;
    }
    match *policy {
        PolicySpec::Batching { .. } | PolicySpec::NoControl => Mandate::None,
        PolicySpec::NoWait { l0 } => {
            if taxi.is_force_stopped && taxi.position >= l0 {
                Mandate::MustDischargeNow
            } else {
                Mandate::None
            }
        }
        PolicySpec::Downstream { l0, l_h } => {
            if taxi.is_force_stopped && taxi.position >= l0 {
                Mandate::MustDischargeNow
            } else {
                Mandate::DeferUntil(l_h)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Red,
    Green,
}

/// Pedestrian crossing modeled as a signal whose red and green durations
/// are redrawn every cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosswalkSignal {
    pub position: f64,
    pub red_duration: EmpiricalDistribution,
    pub green_duration: EmpiricalDistribution,
    pub phase: SignalPhase,
    pub remaining: f64,
}

impl CrosswalkSignal {
    /// Starts in green with a freshly drawn duration.
    pub fn new<R: Rng + ?Sized>(
        position: f64,
        red_duration: EmpiricalDistribution,
        green_duration: EmpiricalDistribution,
        rng: &mut R,
    ) -> Result<Self> {
        if red_duration.min() <= 0.0 || green_duration.min() <= 0.0 {
            return Err(config("crosswalk phase durations must be positive"));
        }
        let remaining = green_duration.sample(rng);
        Ok(Self {
            position,
            red_duration,
            green_duration,
            phase: SignalPhase::Green,
            remaining,
        })
    }

    pub fn is_red(&self) -> bool {
        self.phase == SignalPhase::Red
    }

    /// Advances the signal by `dt` and returns whether it blocks traffic
    /// for the step.
    pub fn tick<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> bool {
        self.remaining -= dt;
        while self.remaining <= 1e-9 {
            let (next, dist) = match self.phase {
                SignalPhase::Red => (SignalPhase::Green, &self.green_duration),
                SignalPhase::Green => (SignalPhase::Red, &self.red_duration),
            };
            self.remaining += dist.sample(rng);
            self.phase = next;
        }
        self.is_red()
    }
}

/// Release bookkeeping for the batching policy.
#[derive(Debug, Clone, Default)]
pub struct BatchController {
    next_batch_id: u32,
    /// Taxis of the current batch still to be admitted.
    pub pending: usize,
    pub current: Option<CurrentBatch>,
    pub released: Vec<(f64, BatchKind, usize, ReleaseReason)>,
}

#[derive(Debug, Clone)]
pub struct CurrentBatch {
    pub id: u32,
    pub kind: BatchKind,
    pub members: Vec<u64>,
}

impl BatchController {
    /// Picks secondary thresholds while any taxi of the current batch is
    /// stopped in the lane, primary otherwise.
    pub fn params_for(
        &self,
        any_member_stopped: bool,
        primary: &BatchingParams,
        secondary: &BatchingParams,
    ) -> (BatchKind, BatchingParams) {
        if self.current.is_some() && any_member_stopped {
            (BatchKind::Secondary, *secondary)
        } else {
            (BatchKind::Primary, *primary)
        }
    }

    pub fn release(&mut self, time: f64, kind: BatchKind, size: usize, reason: ReleaseReason) -> u32 {
        let id = self.next_batch_id;
        self.next_batch_id += 1;
        self.pending = size;
        self.current = Some(CurrentBatch {
            id,
            kind,
            members: Vec::with_capacity(size),
        });
        self.released.push((time, kind, size, reason));
        id
    }

    /// Registers an admitted taxi; returns `(batch id, is_batch_lead)`.
    pub fn admit(&mut self, taxi: u64) -> Option<(u32, bool)> {
        if self.pending == 0 {
            return None;
        }
        let batch = self.current.as_mut()?;
        self.pending -= 1;
        batch.members.push(taxi);
        Some((batch.id, batch.members.len() == 1))
    }
}
