//! Longitudinal motion in the single drop-off lane.
//!
//! Vehicles follow a Newell-type rule with bounded acceleration and
//! deceleration: each step a vehicle takes the largest speed that (a) is at
//! most `a_max * dt` above its current speed, (b) does not exceed the cruise
//! speed of its segment, and (c) still lets it brake at `d_max` and halt at
//! or before its nearest obstacle. Obstacles are the immediate leader's rear
//! position one reaction time ago, minus the jam spacing, and any stop
//! targets (crosswalk, drop-off locations).
//!
//! Braking distances are evaluated in discrete time (speed reduced by
//! `d_max * dt` per step, position advanced with the new speed), so a
//! vehicle approaching a stationary obstacle halts exactly on it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Speeds below this are "stopped" for stop-episode bookkeeping.
pub const STOPPED_SPEED: f64 = 0.05;

const POSITION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneConfig {
    /// Lane length in meters; vehicles exit when their rear passes it.
    pub length: f64,
    /// Interior cruise-speed segment boundaries, strictly increasing.
    pub segment_boundaries: Vec<f64>,
    /// One cruise speed per segment upstream of the last boundary.
    pub cruise_speed_per_segment: Vec<f64>,
    /// Cruise speed downstream of the last boundary.
    pub cruise_speed_tail: f64,
    pub jam_spacing: f64,
    pub reaction_time: f64,
    pub crosswalk_position: f64,
    pub entry_speed: f64,
    pub entry_headway: f64,
    pub max_acceleration: f64,
    /// Magnitude of the maximum deceleration.
    pub max_deceleration: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            length: 240.0,
            segment_boundaries: vec![54.5, 91.0, 119.5, 169.0],
            cruise_speed_per_segment: vec![6.13, 4.94, 3.30, 6.07],
            cruise_speed_tail: 5.72,
            jam_spacing: 7.5,
            reaction_time: 1.0,
            crosswalk_position: 120.0,
            entry_speed: 4.54,
            entry_headway: 2.0,
            max_acceleration: 2.12,
            max_deceleration: 2.86,
        }
    }
}

impl LaneConfig {
    pub fn validate(&self, dt: f64) -> Result<()> {
        let bad = |m: &str| Err(crate::error::config(format!("lane: {m}")));
        if !(self.length > 0.0) {
            return bad("length must be positive");
        }
        if self.cruise_speed_per_segment.len() != self.segment_boundaries.len() {
            return bad("need one cruise speed per segment boundary (tail speed is separate)");
        }
        let mut prev = 0.0;
        for &b in &self.segment_boundaries {
            if !(b > prev && b < self.length) {
                return bad("segment boundaries must be strictly increasing inside (0, length)");
            }
            prev = b;
        }
        if self
            .cruise_speed_per_segment
            .iter()
            .chain(std::iter::once(&self.cruise_speed_tail))
            .any(|&v| !(v > 0.0))
        {
            return bad("cruise speeds must be positive");
        }
        if !(self.jam_spacing > 0.0) || !(self.reaction_time > 0.0) {
            return bad("jam spacing and reaction time must be positive");
        }
        if !(self.max_acceleration > 0.0) || !(self.max_deceleration > 0.0) {
            return bad("acceleration bounds must be positive");
        }
        if !(self.entry_speed >= 0.0) || !(self.entry_headway >= 0.0) {
            return bad("entry speed and headway must be non-negative");
        }
        if !(0.0..=self.length).contains(&self.crosswalk_position) {
            return bad("crosswalk must lie inside the lane");
        }
        if !(dt > 0.0) {
            return bad("time step must be positive");
        }
        let ratio = self.reaction_time / dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("reaction time must be a positive integer multiple of the time step");
        }
        Ok(())
    }

    /// Number of samples held in a lagged-position buffer.
    pub fn lag_steps(&self, dt: f64) -> usize {
        ((self.reaction_time / dt).round() as usize).max(1)
    }

    /// Cruise speed of the segment containing `position`. Boundary points
    /// belong to the downstream segment.
    pub fn desired_speed(&self, position: f64) -> Result<f64> {
        if !(0.0..=self.length).contains(&position) {
            return Err(domain(format!(
                "position {position} m is outside the lane [0, {}]",
                self.length
            )));
        }
        Ok(self.speed_at(position))
    }

    /// Like [`desired_speed`](Self::desired_speed) but total: positions past
    /// the lane end use the tail speed.
    pub(crate) fn speed_at(&self, position: f64) -> f64 {
        let idx = self.segment_boundaries.partition_point(|&b| b <= position);
        self.cruise_speed_per_segment
            .get(idx)
            .copied()
            .unwrap_or(self.cruise_speed_tail)
    }

    /// Rear position at which a vehicle must halt when the crosswalk is red.
    pub fn crosswalk_stop_line(&self) -> f64 {
        (self.crosswalk_position - self.jam_spacing).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleKinematics {
    /// Rear-end longitudinal coordinate in meters.
    pub position: f64,
    pub speed: f64,
    pub max_acceleration: f64,
    pub max_deceleration: f64,
}

impl VehicleKinematics {
    pub fn new(position: f64, speed: f64, lane: &LaneConfig) -> Self {
        Self {
            position,
            speed,
            max_acceleration: lane.max_acceleration,
            max_deceleration: lane.max_deceleration,
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.speed < STOPPED_SPEED
    }

    /// Distance needed to halt from the current speed when braking at the
    /// maximum rate, with the same discretization used by [`advance_vehicle`].
    pub fn stopping_distance(&self, dt: f64) -> f64 {
        let c = self.max_deceleration * dt;
        let mut v = self.speed - c;
        let mut d = 0.0;
        while v > 0.0 {
            d += v * dt;
            v -= c;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Leader,
    CrosswalkRed,
    MandatedDropoff,
    DesiredDropoff,
}

/// A position the vehicle's rear must not pass. Acts as a stationary
/// virtual leader located one jam spacing further downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopTarget {
    pub position: f64,
    pub kind: StopKind,
}

/// Largest speed `v` (capped at `cap`) such that, braking by `step` per tick
/// starting with `v`, the distance covered while the speed is still above
/// `floor` is at most `gap`.
pub(crate) fn braking_speed_limit(gap: f64, floor: f64, step: f64, dt: f64, cap: f64) -> f64 {
    if cap <= floor {
        return cap;
    }
    let budget = gap.max(0.0) / dt;
    let mut best = floor;
    let mut n = 1.0_f64;
    loop {
        // speeds in ((n-1) step, n step] above the floor take n ticks to shed
        let lo = (n - 1.0) * step;
        let hi = n * step;
        let w = (budget - n * floor + step * n * (n - 1.0) / 2.0) / n;
        if w <= lo {
            break;
        }
        best = floor + w.min(hi);
        if w < hi || best >= cap {
            break;
        }
        n += 1.0;
    }
    best.min(cap)
}

/// One time step for one vehicle.
///
/// `leader_lagged` is the rear position of the immediately downstream
/// vehicle one reaction time ago.
pub fn advance_vehicle(
    state: &VehicleKinematics,
    leader_lagged: Option<f64>,
    stop_targets: &[StopTarget],
    lane: &LaneConfig,
    dt: f64,
) -> Result<VehicleKinematics> {
    if !(dt > 0.0) {
        return Err(domain(format!("time step must be positive, got {dt}")));
    }
    let x = state.position;
    let v = state.speed;
    if !(x >= 0.0) || !(v >= 0.0) {
        return Err(domain(format!("invalid vehicle state x={x} v={v}")));
    }
    let step = state.max_deceleration * dt;

    let mut upper = (v + state.max_acceleration * dt).min(lane.speed_at(x));
    for &b in lane.segment_boundaries.iter().filter(|&&b| b > x) {
        let limit = lane.speed_at(b);
        upper = braking_speed_limit(b - x - POSITION_TOL, limit, step, dt, upper);
    }

    let mut obstacle: Option<f64> = None;
    if let Some(lead) = leader_lagged {
        if lead < x - POSITION_TOL {
            return Err(domain(format!(
                "leader sample {lead} m is behind follower at {x} m"
            )));
        }
        obstacle = Some(lead - lane.jam_spacing);
    }
    for t in stop_targets {
        if t.position < x - 1e-6 {
            return Err(domain(format!(
                "{:?} stop target at {} m is behind vehicle at {x} m",
                t.kind, t.position
            )));
        }
        obstacle = Some(obstacle.map_or(t.position, |o| o.min(t.position)));
    }
    if let Some(p) = obstacle {
        upper = braking_speed_limit(p - x, 0.0, step, dt, upper);
    }

    let mut speed = upper.max((v - step).max(0.0));
    let mut position = x + speed * dt;
    if let Some(p) = obstacle {
        if position > p {
            position = p.max(x);
            speed = (position - x) / dt;
        }
    }
    Ok(VehicleKinematics {
        position,
        speed,
        ..*state
    })
}

/// Fixed-length history of a vehicle's positions, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LagBuffer {
    samples: VecDeque<f64>,
}

impl LagBuffer {
    /// A buffer of `len` samples, prefilled with the entry position.
    pub fn new(len: usize, entry_position: f64) -> Self {
        Self {
            samples: std::iter::repeat(entry_position).take(len.max(1)).collect(),
        }
    }

    pub fn push(&mut self, position: f64) {
        self.samples.pop_front();
        self.samples.push_back(position);
    }

    /// Position one reaction time before the next step's end.
    pub fn lagged(&self) -> f64 {
        self.samples[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneVehicle {
    pub id: u64,
    pub kinematics: VehicleKinematics,
    pub history: LagBuffer,
}

impl LaneVehicle {
    pub fn enter(id: u64, position: f64, speed: f64, lane: &LaneConfig, dt: f64) -> Self {
        Self {
            id,
            kinematics: VehicleKinematics::new(position, speed, lane),
            history: LagBuffer::new(lane.lag_steps(dt), position),
        }
    }
}

/// Anything that carries a [`LaneVehicle`], so the lane can be stepped
/// without copying richer per-vehicle state.
pub trait LaneOccupant {
    fn vehicle(&self) -> &LaneVehicle;
    fn vehicle_mut(&mut self) -> &mut LaneVehicle;
}

impl LaneOccupant for LaneVehicle {
    fn vehicle(&self) -> &LaneVehicle {
        self
    }
    fn vehicle_mut(&mut self) -> &mut LaneVehicle {
        self
    }
}

/// Advances every vehicle one step. `vehicles` must be ordered front
/// first; `targets[i]` holds the stop targets of `vehicles[i]`.
pub fn step_lane<V: LaneOccupant>(
    vehicles: &mut [V],
    targets: &[Vec<StopTarget>],
    lane: &LaneConfig,
    dt: f64,
) -> Result<()> {
    if targets.len() != vehicles.len() {
        return Err(domain("one stop-target list per vehicle required"));
    }
    for pair in vehicles.windows(2) {
        let (a, b) = (pair[0].vehicle(), pair[1].vehicle());
        if !(a.kinematics.position > b.kinematics.position) {
            return Err(Error::Domain(format!(
                "vehicles not ordered front first: {} at {} m ahead of {} at {} m",
                b.id, b.kinematics.position, a.id, a.kinematics.position
            )));
        }
    }
    // all updates read lagged leader positions from before this step
    let mut next = Vec::with_capacity(vehicles.len());
    for i in 0..vehicles.len() {
        let leader = (i > 0).then(|| vehicles[i - 1].vehicle().history.lagged());
        next.push(advance_vehicle(
            &vehicles[i].vehicle().kinematics,
            leader,
            &targets[i],
            lane,
            dt,
        )?);
    }
    for (veh, kin) in vehicles.iter_mut().zip(next) {
        let veh = veh.vehicle_mut();
        veh.kinematics = kin;
        veh.history.push(kin.position);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.1;

    fn lane() -> LaneConfig {
        LaneConfig::default()
    }

    #[test]
    fn desired_speed_by_segment() {
        let l = lane();
        assert_eq!(l.desired_speed(100.0).unwrap(), 3.30);
        assert_eq!(l.desired_speed(200.0).unwrap(), 5.72);
        assert_eq!(l.desired_speed(0.0).unwrap(), 6.13);
        // boundary points belong downstream
        assert_eq!(l.desired_speed(91.0).unwrap(), 3.30);
        assert!(matches!(l.desired_speed(-1.0), Err(Error::Domain(_))));
        assert!(matches!(l.desired_speed(240.5), Err(Error::Domain(_))));
    }

    #[test]
    fn validate_rejects_bad_lanes() {
        let mut l = lane();
        assert!(l.validate(DT).is_ok());
        l.segment_boundaries = vec![91.0, 54.5, 119.5, 169.0];
        assert!(l.validate(DT).is_err());
        let mut l = lane();
        l.reaction_time = 1.05;
        assert!(l.validate(DT).is_err());
        let mut l = lane();
        l.jam_spacing = 0.0;
        assert!(l.validate(DT).is_err());
    }

    #[test]
    fn lone_vehicle_accelerates_at_max_rate() {
        let l = lane();
        let s = VehicleKinematics::new(10.0, 0.0, &l);
        let n = advance_vehicle(&s, None, &[], &l, DT).unwrap();
        assert!((n.speed - 0.212).abs() < 1e-12);
    }

    #[test]
    fn follower_halts_at_jam_spacing_behind_stopped_leader() {
        let l = lane();
        let mut s = VehicleKinematics::new(20.0, 4.0, &l);
        for _ in 0..2000 {
            let n = advance_vehicle(&s, Some(100.0), &[], &l, DT).unwrap();
            assert!(n.position <= 92.5);
            assert!(n.speed - s.speed >= -l.max_deceleration * DT - 1e-12);
            s = n;
        }
        assert_eq!(s.position, 92.5);
        assert_eq!(s.speed, 0.0);
    }

    #[test]
    fn free_vehicle_respects_segment_three_speed() {
        let l = lane();
        let mut s = VehicleKinematics::new(0.0, 4.54, &l);
        while s.position < l.length {
            let n = advance_vehicle(&s, None, &[], &l, DT).unwrap();
            if (91.0..119.5).contains(&n.position) {
                assert!(n.speed <= 3.30 + 1e-12, "speed {} at {}", n.speed, n.position);
            }
            assert!(n.speed <= l.speed_at(n.position) + 1e-12);
            s = n;
        }
    }

    #[test]
    fn stop_target_is_met_exactly() {
        let l = lane();
        let mut s = VehicleKinematics::new(0.0, 4.54, &l);
        let t = [StopTarget {
            position: 120.0,
            kind: StopKind::DesiredDropoff,
        }];
        for _ in 0..3000 {
            s = advance_vehicle(&s, None, &t, &l, DT).unwrap();
            assert!(s.position <= 120.0);
        }
        assert_eq!(s.position, 120.0);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let l = lane();
        let s = VehicleKinematics::new(50.0, 1.0, &l);
        assert!(advance_vehicle(&s, None, &[], &l, -0.1).is_err());
        assert!(advance_vehicle(&s, Some(40.0), &[], &l, DT).is_err());
    }

    #[test]
    fn braking_limit_inverts_discrete_stopping_distance() {
        let step = 2.86 * DT;
        for &gap in &[0.0, 0.01, 0.5, 3.0, 17.3, 80.0] {
            let v = braking_speed_limit(gap, 0.0, step, DT, 100.0);
            let k = VehicleKinematics {
                position: 0.0,
                speed: v,
                max_acceleration: 1.0,
                max_deceleration: 2.86,
            };
            // distance = v*dt for this step + stopping distance afterwards
            let used = v * DT + k.stopping_distance(DT);
            assert!(used <= gap + 1e-9, "gap {gap} used {used}");
            let k2 = VehicleKinematics { speed: v + 1e-6, ..k };
            assert!((v + 1e-6) * DT + k2.stopping_distance(DT) > gap);
        }
    }

    #[test]
    fn step_lane_empty_and_unordered() {
        let l = lane();
        let mut empty: Vec<LaneVehicle> = vec![];
        step_lane(&mut empty, &[], &l, DT).unwrap();
        let mut bad = vec![
            LaneVehicle::enter(0, 10.0, 0.0, &l, DT),
            LaneVehicle::enter(1, 20.0, 0.0, &l, DT),
        ];
        assert!(step_lane(&mut bad, &[vec![], vec![]], &l, DT).is_err());
    }

    #[test]
    fn single_free_vehicle_matches_advance() {
        let l = lane();
        let mut one = vec![LaneVehicle::enter(0, 10.0, 2.0, &l, DT)];
        let expect = advance_vehicle(&one[0].kinematics, None, &[], &l, DT).unwrap();
        step_lane(&mut one, &[vec![]], &l, DT).unwrap();
        assert_eq!(one[0].kinematics, expect);
    }

    #[test]
    fn platoon_behind_stopped_leader_packs_at_jam_spacing() {
        let l = lane();
        let mut v = vec![LaneVehicle::enter(0, 150.0, 0.0, &l, DT)];
        for i in 1..=10 {
            v.push(LaneVehicle::enter(i, 150.0 - 12.0 * i as f64, 3.0, &l, DT));
        }
        // leader held in place
        let mut targets = vec![vec![]; v.len()];
        targets[0].push(StopTarget {
            position: 150.0,
            kind: StopKind::MandatedDropoff,
        });
        for _ in 0..3000 {
            step_lane(&mut v, &targets, &l, DT).unwrap();
        }
        for (i, veh) in v.iter().enumerate() {
            assert_eq!(veh.kinematics.position, 150.0 - 7.5 * i as f64);
        }
    }
}
