//! Per-taxi drop-off decisions: where the patron wants to alight, how long
//! they tolerate a forced stop, and how long the drop-off takes.
//!
//! A taxi with a drop-off request drives toward its desired location. Each
//! time it is forced to stop before getting there, a fresh patience value is
//! drawn; once the elapsed time at that stop reaches the patience, the patron
//! alights there. Otherwise the patron alights on reaching the desired
//! location.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{EmpiricalDistribution, MixtureGamma};
use crate::error::{config, domain, Error, Result};

/// Patience distributions: one per lane segment for a taxi's first forced
/// stop, one pooled distribution for every later stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatienceModel {
    /// Interior boundaries of the segments the first-instance models refer to.
    pub segment_boundaries: Vec<f64>,
    pub first_instance: Vec<MixtureGamma>,
    pub later_instances: MixtureGamma,
}

impl PatienceModel {
    pub fn validate(&self) -> Result<()> {
        if self.first_instance.len() != self.segment_boundaries.len() + 1 {
            return Err(config(format!(
                "patience: {} boundaries need {} first-instance models, found {}",
                self.segment_boundaries.len(),
                self.segment_boundaries.len() + 1,
                self.first_instance.len()
            )));
        }
        if self.segment_boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config("patience: segment boundaries must be increasing"));
        }
        for m in self.first_instance.iter().chain([&self.later_instances]) {
            m.validate().map_err(|e| config(format!("patience: {e}")))?;
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.first_instance.len()
    }

    /// Segment containing `position`; positions past the last boundary fall
    /// in the last segment.
    pub fn segment_index(&self, position: f64) -> usize {
        self.segment_boundaries.partition_point(|&b| b <= position)
    }

    /// Parameter sets that break the usual impatient-versus-patient pattern
    /// (smaller mean and variance in component 1). Not an error, only
    /// worth reporting.
    pub fn pattern_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, m) in self.first_instance.iter().enumerate() {
            if !m.has_impatient_first_pattern() {
                out.push(format!(
                    "first-instance segment {}: impatient component is not the smaller one",
                    i + 1
                ));
            }
        }
        if !self.later_instances.has_impatient_first_pattern() {
            out.push("later instances: impatient component is not the smaller one".into());
        }
        out
    }
}

pub fn sample_desired_location<R: Rng + ?Sized>(dist: &EmpiricalDistribution, rng: &mut R) -> f64 {
    dist.sample(rng)
}

/// Patience for the `stop_instance`-th forced stop (1-based) of a taxi
/// whose stop began in `segment`.
pub fn sample_patience<R: Rng + ?Sized>(
    model: &PatienceModel,
    segment: usize,
    stop_instance: u32,
    rng: &mut R,
) -> Result<f64> {
    if stop_instance == 0 {
        return Err(domain("stop instances are counted from 1"));
    }
    let mixture = if stop_instance == 1 {
        model.first_instance.get(segment).ok_or_else(|| {
            domain(format!(
                "segment {segment} out of range (model has {})",
                model.segment_count()
            ))
        })?
    } else {
        &model.later_instances
    };
    Ok(mixture.sample(rng))
}

/// Dwell from door opening to closing, including preparation time for
/// non-lead taxis (carried as the offset of `dist_other`).
pub fn sample_dwell<R: Rng + ?Sized>(
    dist_lead: &EmpiricalDistribution,
    dist_other: &EmpiricalDistribution,
    is_lead: bool,
    rng: &mut R,
) -> f64 {
    if is_lead {
        dist_lead.sample(rng)
    } else {
        dist_other.sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Moving toward the desired location (or through the lane without a request).
    Approaching,
    ForcedStopped,
    Discharging,
    /// Patron has alighted; driving out.
    Done,
    /// Left the lane.
    Exiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopAction {
    KeepWaiting,
    BeginDischarge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoffState {
    pub has_dropoff_request: bool,
    pub desired_location: f64,
    pub stop_instance_count: u32,
    pub current_patience: Option<f64>,
    pub elapsed_at_current_stop: f64,
    pub phase: Phase,
    discharges: u32,
}

impl DropoffState {
    pub fn new(has_dropoff_request: bool, desired_location: f64) -> Self {
        Self {
            has_dropoff_request,
            desired_location,
            stop_instance_count: 0,
            current_patience: None,
            elapsed_at_current_stop: 0.0,
            phase: Phase::Approaching,
            discharges: 0,
        }
    }

    pub fn has_discharged(&self) -> bool {
        self.discharges > 0
    }

    /// Whether the patron still has to alight in the lane.
    pub fn pending(&self) -> bool {
        self.has_dropoff_request && self.discharges == 0
    }

    /// Starts a forced-stop episode with a freshly drawn patience and
    /// returns its 1-based instance number.
    pub fn begin_forced_stop(&mut self, patience: f64) -> Result<u32> {
        if self.phase != Phase::Approaching || !self.pending() {
            return Err(Error::State(format!(
                "forced stop cannot start in phase {:?}",
                self.phase
            )));
        }
        self.stop_instance_count += 1;
        self.current_patience = Some(patience);
        self.elapsed_at_current_stop = 0.0;
        self.phase = Phase::ForcedStopped;
        Ok(self.stop_instance_count)
    }

    /// The taxi moved on without its patron alighting.
    pub fn end_forced_stop(&mut self) -> Result<()> {
        if self.phase != Phase::ForcedStopped {
            return Err(Error::State(format!(
                "no forced stop to end in phase {:?}",
                self.phase
            )));
        }
        self.phase = Phase::Approaching;
        self.current_patience = None;
        Ok(())
    }

    pub fn begin_discharge(&mut self) -> Result<()> {
        if !self.pending()
            || !matches!(self.phase, Phase::Approaching | Phase::ForcedStopped)
        {
            return Err(Error::State(format!(
                "discharge cannot start in phase {:?} (request {}, discharged {})",
                self.phase,
                self.has_dropoff_request,
                self.has_discharged()
            )));
        }
        self.discharges += 1;
        self.current_patience = None;
        self.phase = Phase::Discharging;
        Ok(())
    }

    pub fn finish_discharge(&mut self) -> Result<()> {
        if self.phase != Phase::Discharging {
            return Err(Error::State(format!(
                "no discharge in progress in phase {:?}",
                self.phase
            )));
        }
        self.phase = Phase::Done;
        Ok(())
    }

    pub fn exit(&mut self) {
        self.phase = Phase::Exiting;
    }
}

/// One tick of a forced stop. Accumulates the elapsed time and reports
/// whether the patron's patience has run out.
pub fn on_forced_stop_tick(state: &mut DropoffState, dt: f64) -> Result<StopAction> {
    if state.phase != Phase::ForcedStopped {
        return Err(Error::State(format!(
            "forced-stop tick in phase {:?}",
            state.phase
        )));
    }
    let patience = state
        .current_patience
        .ok_or_else(|| Error::State("forced stop without a patience draw".into()))?;
    let action = if state.elapsed_at_current_stop + dt >= patience {
        StopAction::BeginDischarge
    } else {
        StopAction::KeepWaiting
    };
    state.elapsed_at_current_stop += dt;
    Ok(action)
}

/// How close (m) a taxi must get to its desired location to count as
/// having reached it.
pub const REACH_TOLERANCE: f64 = 0.05;

/// Starts the discharge once the taxi has reached its desired location.
/// Does nothing for taxis without a pending request or not approaching.
pub fn on_reach_desired_location(state: &mut DropoffState, position: f64) -> Option<StopAction> {
    if state.phase == Phase::Approaching && state.pending() && position >= state.desired_location - REACH_TOLERANCE
    {
        state.begin_discharge().ok()?;
        Some(StopAction::BeginDischarge)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forced(patience: f64, elapsed: f64) -> DropoffState {
        let mut s = DropoffState::new(true, 120.0);
        s.begin_forced_stop(patience).unwrap();
        s.elapsed_at_current_stop = elapsed;
        s
    }

    #[test]
    fn patience_threshold_crossing() {
        let mut s = forced(5.0, 4.95);
        assert_eq!(on_forced_stop_tick(&mut s, 0.1).unwrap(), StopAction::BeginDischarge);
        let mut s = forced(1e12, 1e6);
        assert_eq!(on_forced_stop_tick(&mut s, 0.1).unwrap(), StopAction::KeepWaiting);
        let mut s = forced(0.0, 0.0);
        assert_eq!(on_forced_stop_tick(&mut s, 0.1).unwrap(), StopAction::BeginDischarge);
    }

    #[test]
    fn tick_outside_forced_stop_is_a_state_error() {
        let mut s = DropoffState::new(true, 120.0);
        assert!(matches!(on_forced_stop_tick(&mut s, 0.1), Err(Error::State(_))));
    }

    #[test]
    fn reaching_desired_location() {
        let mut s = DropoffState::new(true, 120.0);
        assert_eq!(on_reach_desired_location(&mut s, 119.0), None);
        assert_eq!(
            on_reach_desired_location(&mut s, 120.0),
            Some(StopAction::BeginDischarge)
        );
        assert_eq!(s.phase, Phase::Discharging);

        let mut none = DropoffState::new(false, 120.0);
        assert_eq!(on_reach_desired_location(&mut none, 200.0), None);

        let mut early = forced(0.0, 0.0);
        early.begin_discharge().unwrap();
        early.finish_discharge().unwrap();
        assert_eq!(on_reach_desired_location(&mut early, 130.0), None);
        assert!(early.begin_discharge().is_err());
    }

    #[test]
    fn instance_counter_increments_per_episode() {
        let mut s = DropoffState::new(true, 150.0);
        assert_eq!(s.begin_forced_stop(3.0).unwrap(), 1);
        s.end_forced_stop().unwrap();
        assert_eq!(s.begin_forced_stop(3.0).unwrap(), 2);
        assert!(s.begin_forced_stop(3.0).is_err());
    }

    fn model() -> PatienceModel {
        let m = MixtureGamma::new(0.43, 2.13, 1.42, 3.62, 8.77).unwrap();
        PatienceModel {
            segment_boundaries: vec![54.5, 91.0, 119.5],
            first_instance: vec![m; 4],
            later_instances: MixtureGamma::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn patience_lookup_and_errors() {
        let m = model();
        m.validate().unwrap();
        assert_eq!(m.segment_index(0.0), 0);
        assert_eq!(m.segment_index(91.0), 2);
        assert_eq!(m.segment_index(230.0), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(sample_patience(&m, 4, 1, &mut rng).is_err());
        assert!(sample_patience(&m, 0, 0, &mut rng).is_err());
        // later instances ignore the segment index
        assert!(sample_patience(&m, 99, 2, &mut rng).is_ok());
        assert!(m.pattern_warnings().len() == 1);
    }

    #[test]
    fn dwell_uses_lead_or_offset_distribution() {
        let lead = EmpiricalDistribution::new(vec![30.0], 0.0).unwrap();
        let other = EmpiricalDistribution::new(vec![10.0], 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_dwell(&lead, &other, true, &mut rng), 30.0);
        assert_eq!(sample_dwell(&lead, &other, false, &mut rng), 18.0);
        let point = EmpiricalDistribution::new(vec![120.0], 0.0).unwrap();
        assert_eq!(sample_desired_location(&point, &mut rng), 120.0);
    }
}
