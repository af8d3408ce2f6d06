//! The time-stepped lane simulation.
//!
//! Each tick: arrivals join the entry queue, the crosswalk signal advances,
//! every vehicle moves under its stop targets, exits are removed, drop-off
//! state machines advance, and finally the active policy decides which
//! queued taxi (if any) enters the lane.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::behavior::{
    on_forced_stop_tick, on_reach_desired_location, sample_desired_location, sample_dwell,
    sample_patience, DropoffState, Phase, StopAction, REACH_TOLERANCE,
};
use crate::config::ScenarioConfig;
use crate::control::{
    batch_size, batching_decide_release, policy_mandate, BatchController, BatchKind, CrosswalkSignal,
    LaneSnapshot, Mandate, PolicySpec, ReleaseReason, TaxiView,
};
use crate::error::{Error, Result};
use crate::kinematics::{
    braking_speed_limit, step_lane, LaneOccupant, LaneVehicle, StopKind, StopTarget,
};

const STREAM_ARRIVALS: u64 = 1;
const STREAM_CROSSWALK: u64 = 2;
const STREAM_TAXI: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `index` derived from `base`:
/// `splitmix64(splitmix64(base) ^ index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

fn stream(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, kind), index))
}

/// Poisson arrival times (seconds) over `[0, horizon)`.
pub fn generate_arrivals<R: Rng + ?Sized>(rate_per_hour: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if !(rate_per_hour > 0.0) || !(horizon > 0.0) {
        return out;
    }
    let gap = Exp::new(rate_per_hour / 3600.0).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Enter,
    StopStart,
    StopEnd,
    DoorOpen,
    DoorClose,
    Exit,
}

/// One line of the event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub time: f64,
    pub taxi: u64,
    pub kind: EventKind,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopEpisode {
    pub start: f64,
    pub end: f64,
    pub position: f64,
    pub instance: u32,
    pub segment: usize,
    /// Start of the stop until door opening, or the whole stop.
    pub wait: f64,
    pub discharged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoffRecord {
    pub position: f64,
    pub door_open: f64,
    pub door_close: Option<f64>,
    pub at_forced_stop: bool,
    pub mandated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxiRecord {
    pub id: u64,
    pub arrival_time: f64,
    pub entry_time: Option<f64>,
    pub exit_time: Option<f64>,
    pub has_request: bool,
    pub desired_location: f64,
    pub is_lead: bool,
    pub batch: Option<u32>,
    pub dropoff: Option<DropoffRecord>,
    pub stops: Vec<StopEpisode>,
}

impl TaxiRecord {
    pub fn travel_time(&self) -> Option<f64> {
        Some(self.exit_time? - self.entry_time?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRelease {
    pub time: f64,
    pub kind: BatchKind,
    pub size: usize,
    pub long_dwell: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub warmup: f64,
    pub horizon: f64,
    pub dt: f64,
    pub taxis: Vec<TaxiRecord>,
    pub events: Vec<Event>,
    pub releases: Vec<BatchRelease>,
    /// Post-warmup seconds during which the entry queue held a taxi.
    pub queue_nonempty_time: f64,
    pub max_queue: usize,
}

impl RunResult {
    /// Exit times of every taxi that left the lane.
    pub fn exit_times(&self) -> Vec<f64> {
        self.taxis.iter().filter_map(|t| t.exit_time).collect()
    }

    /// Event log as line-delimited JSON.
    pub fn events_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct OpenEpisode {
    start: f64,
    position: f64,
    instance: u32,
    segment: usize,
}

/// A taxi inside the lane.
#[derive(Debug, Clone)]
pub struct TaxiState {
    pub vehicle: LaneVehicle,
    pub dropoff: DropoffState,
    pub is_lead: bool,
    pub batch: Option<u32>,
    rng: ChaCha8Rng,
    stopped_since: Option<f64>,
    episode: Option<OpenEpisode>,
    dwell_remaining: f64,
    hold: Option<f64>,
}

impl LaneOccupant for TaxiState {
    fn vehicle(&self) -> &LaneVehicle {
        &self.vehicle
    }
    fn vehicle_mut(&mut self) -> &mut LaneVehicle {
        &mut self.vehicle
    }
}

impl TaxiState {
    pub fn position(&self) -> f64 {
        self.vehicle.kinematics.position
    }
    pub fn speed(&self) -> f64 {
        self.vehicle.kinematics.speed
    }
}

struct Queued {
    id: u64,
    rng: ChaCha8Rng,
    has_request: bool,
    desired: f64,
}

/// Called after every tick with the vehicles in the lane, front first.
pub trait Observer {
    fn on_tick(&mut self, tick: u64, time: f64, lane: &[TaxiState]);
}

impl<F: FnMut(u64, f64, &[TaxiState])> Observer for F {
    fn on_tick(&mut self, tick: u64, time: f64, lane: &[TaxiState]) {
        self(tick, time, lane)
    }
}

/// Observer that does nothing.
pub struct NoObserver;
impl Observer for NoObserver {
    fn on_tick(&mut self, _: u64, _: f64, _: &[TaxiState]) {}
}

pub fn run_simulation(config: &ScenarioConfig, seed: u64) -> Result<RunResult> {
    run_simulation_observed(config, seed, &mut NoObserver)
}

pub fn run_simulation_observed(
    config: &ScenarioConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> Result<RunResult> {
    config.validate()?;
    let mut rng = stream(seed, STREAM_ARRIVALS, 0);
    let arrivals = generate_arrivals(config.demand_rate, config.horizon, &mut rng);
    Simulation::new(config, seed, arrivals)?.run(observer)
}

/// Like [`run_simulation_observed`] with given arrival times instead of
/// the Poisson stream. Times must be sorted.
pub fn run_with_arrivals(
    config: &ScenarioConfig,
    seed: u64,
    arrivals: &[f64],
    observer: &mut dyn Observer,
) -> Result<RunResult> {
    config.validate()?;
    if arrivals.windows(2).any(|w| !(w[0] <= w[1])) || arrivals.iter().any(|t| !(*t >= 0.0)) {
        return Err(crate::error::domain("arrival times must be sorted and non-negative"));
    }
    Simulation::new(config, seed, arrivals.to_vec())?.run(observer)
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    seed: u64,
    tick: u64,
    now: f64,
    arrivals: VecDeque<f64>,
    queue: VecDeque<Queued>,
    lane: Vec<TaxiState>,
    records: Vec<TaxiRecord>,
    events: Vec<Event>,
    signal: Option<CrosswalkSignal>,
    signal_rng: ChaCha8Rng,
    batches: BatchController,
    last_entry: Option<f64>,
    exits: u64,
    queue_nonempty_time: f64,
    max_queue: usize,
    targets: Vec<Vec<StopTarget>>,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64, arrivals: Vec<f64>) -> Result<Self> {
        let arrivals = arrivals.into();
        let mut signal_rng = stream(seed, STREAM_CROSSWALK, 0);
        let signal = if cfg.crosswalk.enabled {
            Some(CrosswalkSignal::new(
                cfg.lane.crosswalk_position,
                cfg.crosswalk.red_duration.clone(),
                cfg.crosswalk.green_duration.clone(),
                &mut signal_rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            seed,
            tick: 0,
            now: 0.0,
            arrivals,
            queue: VecDeque::new(),
            lane: Vec::new(),
            records: Vec::new(),
            events: Vec::new(),
            signal,
            signal_rng,
            batches: BatchController::default(),
            last_entry: None,
            exits: 0,
            queue_nonempty_time: 0.0,
            max_queue: 0,
            targets: Vec::new(),
        })
    }

    fn run(mut self, observer: &mut dyn Observer) -> Result<RunResult> {
        let dt = self.cfg.dt;
        let ticks = (self.cfg.horizon / dt).round() as u64;
        for n in 0..ticks {
            self.tick = n + 1;
            self.now = self.tick as f64 * dt;
            self.arrive();
            let red = match self.signal.as_mut() {
                Some(s) => s.tick(dt, &mut self.signal_rng),
                None => false,
            };
            self.build_targets(red);
            let before: Vec<f64> = self.lane.iter().map(TaxiState::position).collect();
            step_lane(&mut self.lane, &self.targets, &self.cfg.lane, dt)?;
            self.check_motion(&before)?;
            self.remove_exits()?;
            self.update_behavior()?;
            self.control()?;
            self.check_conservation()?;
            if self.now > self.cfg.warmup && !self.queue.is_empty() {
                self.queue_nonempty_time += dt;
            }
            self.max_queue = self.max_queue.max(self.queue.len());
            observer.on_tick(self.tick, self.now, &self.lane);
        }
        Ok(RunResult {
            seed: self.seed,
            warmup: self.cfg.warmup,
            horizon: self.cfg.horizon,
            dt,
            taxis: self.records,
            events: self.events,
            releases: self
                .batches
                .released
                .iter()
                .map(|&(time, kind, size, reason)| BatchRelease {
                    time,
                    kind,
                    size,
                    long_dwell: reason == ReleaseReason::LongDwell,
                })
                .collect(),
            queue_nonempty_time: self.queue_nonempty_time,
            max_queue: self.max_queue,
        })
    }

    fn log(&mut self, taxi: u64, kind: EventKind, position: f64) {
        self.events.push(Event {
            tick: self.tick,
            time: self.now,
            taxi,
            kind,
            position,
        });
    }

    fn invariant(&self, taxi: u64, what: impl Into<String>) -> Error {
        Error::Invariant {
            tick: self.tick,
            taxi,
            what: what.into(),
        }
    }

    fn arrive(&mut self) {
        let b = &self.cfg.behavior;
        while self.arrivals.front().is_some_and(|&t| t <= self.now) {
            let t = self.arrivals.pop_front().unwrap_or_default();
            let id = self.records.len() as u64;
            let mut rng = stream(self.seed, STREAM_TAXI, id);
            let has_request = rng.random::<f64>() < b.dropoff_proportion;
            let desired = sample_desired_location(&b.desired_location, &mut rng);
            self.records.push(TaxiRecord {
                id,
                arrival_time: t,
                entry_time: None,
                exit_time: None,
                has_request,
                desired_location: desired,
                is_lead: false,
                batch: None,
                dropoff: None,
                stops: Vec::new(),
            });
            self.queue.push_back(Queued {
                id,
                rng,
                has_request,
                desired,
            });
        }
    }

    /// Where a taxi with a pending request intends to discharge voluntarily.
    fn voluntary_target(&self, taxi: &TaxiState) -> f64 {
        match self.cfg.policy {
            PolicySpec::Downstream { l_h, .. } => l_h,
            _ => taxi.dropoff.desired_location,
        }
    }

    fn build_targets(&mut self, red: bool) {
        let lane = &self.cfg.lane;
        let dt = self.cfg.dt;
        let stop_line = lane.crosswalk_stop_line();
        self.targets.resize_with(self.lane.len(), Vec::new);
        for i in 0..self.lane.len() {
            let taxi = &self.lane[i];
            let kin = &taxi.vehicle.kinematics;
            let x = kin.position;
            let reach = x + kin.stopping_distance(dt);
            let mut list = std::mem::take(&mut self.targets[i]);
            list.clear();
            if let Some(h) = taxi.hold {
                list.push(StopTarget {
                    position: h.max(x),
                    kind: StopKind::MandatedDropoff,
                });
            } else if taxi.dropoff.pending() {
                let kind = if matches!(self.cfg.policy, PolicySpec::Downstream { .. }) {
                    StopKind::MandatedDropoff
                } else {
                    StopKind::DesiredDropoff
                };
                // a target that can no longer be met moves to the nearest feasible halt
                list.push(StopTarget {
                    position: self.voluntary_target(taxi).max(reach),
                    kind,
                });
            }
            if red && x < stop_line && reach <= stop_line {
                list.push(StopTarget {
                    position: stop_line,
                    kind: StopKind::CrosswalkRed,
                });
            }
            self.targets[i] = list;
        }
    }

    fn check_motion(&self, before: &[f64]) -> Result<()> {
        let jam = self.cfg.lane.jam_spacing;
        for (taxi, &x0) in self.lane.iter().zip(before) {
            if taxi.position() < x0 {
                return Err(self.invariant(taxi.vehicle.id, "vehicle reversed"));
            }
        }
        for pair in self.lane.windows(2) {
            let gap = pair[0].position() - pair[1].position();
            if gap < jam - 1e-9 {
                return Err(self.invariant(
                    pair[1].vehicle.id,
                    format!("spacing {gap} m to leader {} below jam spacing", pair[0].vehicle.id),
                ));
            }
        }
        Ok(())
    }

    fn remove_exits(&mut self) -> Result<()> {
        let length = self.cfg.lane.length;
        while let Some(front) = self.lane.first() {
            if front.position() < length || front.hold.is_some() || front.dropoff.pending() {
                break;
            }
            let mut taxi = self.lane.remove(0);
            let id = taxi.vehicle.id;
            if taxi.dropoff.has_dropoff_request && !taxi.dropoff.has_discharged() {
                return Err(self.invariant(id, "taxi left the lane without discharging"));
            }
            taxi.dropoff.exit();
            self.records[id as usize].exit_time = Some(self.now);
            self.exits += 1;
            self.log(id, EventKind::Exit, taxi.position());
        }
        Ok(())
    }

    fn update_behavior(&mut self) -> Result<()> {
        for i in 0..self.lane.len() {
            self.update_taxi(i)?;
        }
        Ok(())
    }

    fn update_taxi(&mut self, i: usize) -> Result<()> {
        let dt = self.cfg.dt;
        let now = self.now;
        let stopped = self.lane[i].vehicle.kinematics.is_stopped();
        {
            let t = &mut self.lane[i];
            if stopped {
                t.stopped_since.get_or_insert(now);
            } else {
                t.stopped_since = None;
            }
        }
        let x = self.lane[i].position();
        let id = self.lane[i].vehicle.id;
        match self.lane[i].dropoff.phase {
            Phase::Discharging => {
                let t = &mut self.lane[i];
                t.dwell_remaining -= dt;
                if t.dwell_remaining <= 1e-9 {
                    t.dropoff.finish_discharge()?;
                    t.hold = None;
                    if let Some(d) = self.records[id as usize].dropoff.as_mut() {
                        d.door_close = Some(now);
                    }
                    self.log(id, EventKind::DoorClose, x);
                }
            }
            Phase::Approaching if self.lane[i].dropoff.pending() && stopped => {
                let target = self.voluntary_target(&self.lane[i]);
                if x >= target - REACH_TOLERANCE {
                    let mandated = matches!(self.cfg.policy, PolicySpec::Downstream { .. });
                    if mandated {
                        self.lane[i].dropoff.begin_discharge()?;
                    } else {
                        let reached = on_reach_desired_location(&mut self.lane[i].dropoff, x);
                        if reached != Some(StopAction::BeginDischarge) {
                            return Err(self.invariant(id, "desired location reached but no discharge"));
                        }
                    }
                    self.start_dwell(i, false, mandated);
                } else {
                    self.begin_forced_stop(i)?;
                }
            }
            Phase::ForcedStopped => {
                if !stopped {
                    self.lane[i].dropoff.end_forced_stop()?;
                    self.close_episode(i, false);
                    self.log(id, EventKind::StopEnd, x);
                } else {
                    self.forced_stop_tick(i)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn begin_forced_stop(&mut self, i: usize) -> Result<()> {
        let x = self.lane[i].position();
        let id = self.lane[i].vehicle.id;
        let patience_model = &self.cfg.behavior.patience;
        let segment = patience_model.segment_index(x);
        let t = &mut self.lane[i];
        let instance = t.dropoff.stop_instance_count + 1;
        let patience = sample_patience(patience_model, segment, instance, &mut t.rng)?;
        t.dropoff.begin_forced_stop(patience)?;
        t.episode = Some(OpenEpisode {
            start: self.now,
            position: x,
            instance,
            segment,
        });
        self.log(id, EventKind::StopStart, x);
        let view = TaxiView {
            position: x,
            is_force_stopped: true,
            has_discharged: false,
            has_request: true,
        };
        if policy_mandate(&self.cfg.policy, view) == Mandate::MustDischargeNow {
            self.lane[i].dropoff.begin_discharge()?;
            self.start_dwell(i, true, true);
        }
        Ok(())
    }

    fn forced_stop_tick(&mut self, i: usize) -> Result<()> {
        let dt = self.cfg.dt;
        let x = self.lane[i].position();
        let view = TaxiView {
            position: x,
            is_force_stopped: true,
            has_discharged: false,
            has_request: true,
        };
        let mandate = policy_mandate(&self.cfg.policy, view);
        let action = on_forced_stop_tick(&mut self.lane[i].dropoff, dt)?;
        if mandate == Mandate::MustDischargeNow {
            self.lane[i].dropoff.begin_discharge()?;
            self.start_dwell(i, true, true);
        } else if action == StopAction::BeginDischarge && self.cfg.policy.allows_patience_discharge()
        {
            self.lane[i].dropoff.begin_discharge()?;
            self.start_dwell(i, true, false);
        }
        Ok(())
    }

    fn close_episode(&mut self, i: usize, discharged: bool) {
        let now = self.now;
        let t = &mut self.lane[i];
        if let Some(ep) = t.episode.take() {
            self.records[t.vehicle.id as usize].stops.push(StopEpisode {
                start: ep.start,
                end: now,
                position: ep.position,
                instance: ep.instance,
                segment: ep.segment,
                wait: now - ep.start,
                discharged,
            });
        }
    }

    fn start_dwell(&mut self, i: usize, at_forced_stop: bool, mandated: bool) {
        let b = &self.cfg.behavior;
        let x = self.lane[i].position();
        let id = self.lane[i].vehicle.id;
        if at_forced_stop {
            self.close_episode(i, true);
        }
        let t = &mut self.lane[i];
        let dwell = sample_dwell(&b.dwell_lead, &b.dwell_other, t.is_lead, &mut t.rng);
        t.dwell_remaining = dwell;
        t.hold = Some(x);
        self.records[id as usize].dropoff = Some(DropoffRecord {
            position: x,
            door_open: self.now,
            door_close: None,
            at_forced_stop,
            mandated,
        });
        self.log(id, EventKind::DoorOpen, x);
    }

    fn control(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let lane = &cfg.lane;
        if let PolicySpec::Batching { primary, secondary } = &cfg.policy {
            if self.batches.pending == 0 && !self.queue.is_empty() {
                let members: &[u64] = self
                    .batches
                    .current
                    .as_ref()
                    .map(|b| b.members.as_slice())
                    .unwrap_or(&[]);
                let in_lane = |id: u64| self.lane.iter().find(|t| t.vehicle.id == id);
                let any_stopped = members
                    .iter()
                    .filter_map(|&m| in_lane(m))
                    .any(|t| t.vehicle.kinematics.is_stopped());
                let last_dwell = members
                    .last()
                    .and_then(|&m| in_lane(m))
                    .and_then(|t| t.stopped_since)
                    .map(|s| self.now - s);
                let (kind, params) = self.batches.params_for(any_stopped, primary, secondary);
                let empty = self.lane.last().map_or(lane.length, TaxiState::position);
                let snapshot = LaneSnapshot {
                    empty_upstream: empty,
                    last_taxi_dwell: last_dwell,
                };
                if let Some(reason) = batching_decide_release(snapshot, &params) {
                    let size = batch_size(empty, params.l_left, lane.jam_spacing).min(self.queue.len());
                    if size > 0 {
                        self.batches.release(self.now, kind, size, reason);
                    }
                }
            }
            if self.batches.pending > 0 && self.entrance_open().is_some() {
                self.admit()?;
            }
        } else if !self.queue.is_empty() && self.entrance_open().is_some() {
            self.admit()?;
        }
        Ok(())
    }

    /// Entry speed if a queued taxi may enter now.
    fn entrance_open(&self) -> Option<f64> {
        let lane = &self.cfg.lane;
        if let Some(last) = self.last_entry {
            if self.now - last < lane.entry_headway - 1e-9 {
                return None;
            }
        }
        let mut speed = lane.entry_speed.min(lane.speed_at(0.0));
        if let Some(rear) = self.lane.last() {
            let room = rear.vehicle.history.lagged() - lane.jam_spacing;
            if room < 0.0 {
                return None;
            }
            // enter no faster than what still allows a stop behind the rear taxi
            let step = lane.max_deceleration * self.cfg.dt;
            speed = braking_speed_limit(room, 0.0, step, self.cfg.dt, speed);
        }
        Some(speed)
    }

    fn admit(&mut self) -> Result<()> {
        let Some(speed) = self.entrance_open() else {
            return Ok(());
        };
        let Some(q) = self.queue.pop_front() else {
            return Ok(());
        };
        let cfg = self.cfg;
        let (batch, is_lead) = if cfg.policy.is_batching() {
            match self.batches.admit(q.id) {
                Some((b, lead)) => (Some(b), lead),
                None => return Err(self.invariant(q.id, "admitted outside a released batch")),
            }
        } else {
            let range = cfg.behavior.lead_sensing_range;
            let blocked = self
                .lane
                .iter()
                .any(|t| t.position() <= range && t.vehicle.kinematics.is_stopped());
            (None, !blocked)
        };
        let rec = &mut self.records[q.id as usize];
        rec.entry_time = Some(self.now);
        rec.is_lead = is_lead;
        rec.batch = batch;
        self.lane.push(TaxiState {
            vehicle: LaneVehicle::enter(q.id, 0.0, speed, &cfg.lane, cfg.dt),
            dropoff: DropoffState::new(q.has_request, q.desired),
            is_lead,
            batch,
            rng: q.rng,
            stopped_since: None,
            episode: None,
            dwell_remaining: 0.0,
            hold: None,
        });
        self.last_entry = Some(self.now);
        self.log(q.id, EventKind::Enter, 0.0);
        Ok(())
    }

    fn check_conservation(&self) -> Result<()> {
        let arrived = self.records.len() as u64;
        let inside = (self.lane.len() + self.queue.len()) as u64;
        if arrived != self.exits + inside {
            return Err(self.invariant(
                u64::MAX,
                format!(
                    "conservation: {arrived} arrivals != {} exits + {inside} in lane or queue",
                    self.exits
                ),
            ));
        }
        Ok(())
    }
}
