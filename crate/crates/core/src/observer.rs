//! Observables computed from a world snapshot: per-lane queue and running
//! counts, per-movement efficient pressure and effective running vehicles,
//! per-phase pressure and demand, and per-intersection pressure.
//!
//! Everything here is a pure function of an immutable world; observing never
//! mutates state and may run for all intersections in parallel.
//!
//! Conventions, fixed once for the whole artifact:
//! - queue length counts vehicles slower than the stop threshold, anywhere on
//!   the lane;
//! - running-vehicle distance is measured from the vehicle's front to the
//!   stop line along the lane, and a vehicle exactly at the range bound is
//!   included;
//! - downstream lanes on roads that end at a boundary sink contribute zero
//!   queue to pressures (sinks absorb instantly).

use crate::network::{LaneId, PHASE_COUNT};
use crate::sim::{SimError, World};
use serde::Serialize;

/// Distance from which a running vehicle can reach the stop line within one
/// action duration: exactly `v_max * t_duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveRange {
    pub meters: f64,
    pub v_max: f64,
    pub t_duration: u32,
}

impl EffectiveRange {
    pub fn new(v_max: f64, t_duration: u32) -> EffectiveRange {
        EffectiveRange { meters: v_max * t_duration as f64, v_max, t_duration }
    }
}

/// Observation range for running vehicles. Pressures are identical across
/// modes; only the running-vehicle window changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
pub enum ObservationMode {
    /// Effective range `v_max * t_duration`, per incoming road.
    #[default]
    Default,
    /// Running vehicles within 100 m of the intersection.
    Config1,
    /// Running vehicles within 200 m of the intersection.
    Config2,
    /// All running vehicles on each entering lane.
    Config3,
}

impl ObservationMode {
    /// Range in meters for a road with the given speed limit; `None` means
    /// unbounded.
    pub fn range(self, road_max_speed: f64, t_duration: u32) -> Option<f64> {
        match self {
            ObservationMode::Default => Some(EffectiveRange::new(road_max_speed, t_duration).meters),
            ObservationMode::Config1 => Some(100.0),
            ObservationMode::Config2 => Some(200.0),
            ObservationMode::Config3 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservationMode::Default => "default",
            ObservationMode::Config1 => "config1",
            ObservationMode::Config2 => "config2",
            ObservationMode::Config3 => "config3",
        }
    }
}

/// Queue and running counts for one lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LaneStats {
    pub lane: LaneId,
    /// Vehicles slower than the stop threshold.
    pub queue_length: u32,
    /// Running vehicles with front-to-stop-line distance within the range.
    pub effective_running: u32,
    /// All running vehicles on the lane.
    pub total_running: u32,
}

/// Efficient pressure and effective running count for one movement: the
/// advanced traffic state of that movement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MovementState {
    pub efficient_pressure: f64,
    pub effective_running: u32,
}

/// Everything a controller or agent sees about one intersection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntersectionObservation {
    /// Index into the network's intersection list.
    pub node: usize,
    pub current_phase: usize,
    /// Seconds the current phase has been active (transitions excluded).
    pub phase_elapsed: u32,
    /// Per-movement state in canonical movement order.
    pub movements: Vec<MovementState>,
    /// Efficient phase pressure p(s), lane-count-averaged.
    pub phase_pressure: Vec<f64>,
    /// Classic phase pressure: unaveraged queue sums, for plain MaxPressure.
    pub classic_phase_pressure: Vec<i64>,
    /// Phase demand d(s) under the observation mode's range.
    pub phase_demand: Vec<u32>,
    pub intersection_pressure: i64,
    /// Total queue over the incoming lanes, the queue-reward signal.
    pub incoming_queue: u32,
}

/// Options beyond the standard definitions. `demand_over_used_lanes_only`
/// restricts r(l,m) to the movement's used incoming lanes instead of every
/// lane of the incoming road; it is off by default and untested against the
/// reference behavior.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObserverOptions {
    pub demand_over_used_lanes_only: bool,
}

fn queue_count_thr(world: &World, lane: LaneId, thr: f64) -> u32 {
    world
        .lane_vehicle_ids(lane)
        .iter()
        .filter(|&&vid| world.vehicle(vid).speed < thr)
        .count() as u32
}

fn queue_count(world: &World, lane: LaneId) -> u32 {
    queue_count_thr(world, lane, world.config().stop_speed_threshold)
}

/// Queue length as seen by the pressure definitions: zero for lanes on roads
/// that end at a boundary sink.
fn queue_for_pressure(world: &World, lane: LaneId) -> u32 {
    let road = world.network().lane(lane).road;
    if world.network().is_sink_road(road) {
        0
    } else {
        queue_count(world, lane)
    }
}

fn running_within_thr(world: &World, lane: LaneId, range: Option<f64>, thr: f64) -> u32 {
    let lane_len = world.network().lane_length(lane);
    world
        .lane_vehicle_ids(lane)
        .iter()
        .filter(|&&vid| {
            let v = world.vehicle(vid);
            v.speed >= thr && range.map_or(true, |l| lane_len - v.pos <= l)
        })
        .count() as u32
}

fn running_within(world: &World, lane: LaneId, range: Option<f64>) -> u32 {
    running_within_thr(world, lane, range, world.config().stop_speed_threshold)
}

/// Queue, effective running (within `l_meters` of the stop line), and total
/// running counts for a lane.
pub fn lane_stats(world: &World, lane: LaneId, l_meters: f64, stop_threshold: f64) -> Result<LaneStats, SimError> {
    if lane.0 as usize >= world.network().lanes.len() {
        return Err(SimError::UnknownLane(lane.0));
    }
    debug_assert!(l_meters >= 0.0);
    Ok(LaneStats {
        lane,
        queue_length: queue_count_thr(world, lane, stop_threshold),
        effective_running: running_within_thr(world, lane, Some(l_meters), stop_threshold),
        total_running: running_within_thr(world, lane, None, stop_threshold),
    })
}

/// Lane stats under an observation mode's range, with the simulation's own
/// stop threshold.
pub fn lane_stats_for_mode(world: &World, lane: LaneId, mode: ObservationMode, t_duration: u32) -> LaneStats {
    let road = world.network().lane(lane).road;
    let range = mode.range(world.network().road(road).max_speed, t_duration);
    LaneStats {
        lane,
        queue_length: queue_count(world, lane),
        effective_running: running_within(world, lane, range),
        total_running: running_within(world, lane, None),
    }
}

/// Efficient pressure of a movement: mean queue over the used incoming lanes
/// minus mean queue over the downstream road's lanes.
pub fn efficient_pressure(world: &World, node: usize, movement: usize) -> f64 {
    let mv = &world.network().intersections[node].movements[movement];
    let up: u32 = mv.in_lanes.iter().map(|&l| queue_count(world, l)).sum();
    let down: u32 = mv.out_lanes.iter().map(|&l| queue_for_pressure(world, l)).sum();
    up as f64 / mv.in_lanes.len() as f64 - down as f64 / mv.out_lanes.len() as f64
}

/// Phase pressure p(s): the sum of its movements' efficient pressures.
pub fn phase_pressure(world: &World, node: usize, phase: usize) -> f64 {
    world.network().intersections[node].phases[phase]
        .movements
        .iter()
        .map(|&mi| efficient_pressure(world, node, mi))
        .sum()
}

/// Classic movement pressure: unaveraged queue sums, upstream minus downstream.
fn classic_movement_pressure(world: &World, node: usize, movement: usize) -> i64 {
    let mv = &world.network().intersections[node].movements[movement];
    let up: i64 = mv.in_lanes.iter().map(|&l| queue_count(world, l) as i64).sum();
    let down: i64 = mv.out_lanes.iter().map(|&l| queue_for_pressure(world, l) as i64).sum();
    up - down
}

/// Intersection pressure P_i: total incoming queue minus total outgoing queue.
pub fn intersection_pressure(world: &World, node: usize) -> i64 {
    let n = &world.network().intersections[node];
    let inc: i64 = n.incoming_lanes.iter().map(|&l| queue_count(world, l) as i64).sum();
    let out: i64 = n.outgoing_lanes.iter().map(|&l| queue_for_pressure(world, l) as i64).sum();
    inc - out
}

/// Effective running vehicles r(l,m) of a movement: running vehicles within
/// range summed over the incoming road's lanes.
fn movement_running(world: &World, node: usize, movement: usize, mode: ObservationMode, t_duration: u32, opts: ObserverOptions) -> u32 {
    let net = world.network();
    let mv = &net.intersections[node].movements[movement];
    let road = net.road(mv.incoming);
    let range = mode.range(road.max_speed, t_duration);
    if opts.demand_over_used_lanes_only {
        mv.in_lanes.iter().map(|&l| running_within(world, l, range)).sum()
    } else {
        road.lanes.iter().map(|&l| running_within(world, l, range)).sum()
    }
}

/// Phase demand d(s) with an explicit range in meters.
pub fn phase_demand(world: &World, node: usize, phase: usize, l_meters: f64) -> u32 {
    let net = world.network();
    net.intersections[node].phases[phase]
        .movements
        .iter()
        .map(|&mi| {
            let mv = &net.intersections[node].movements[mi];
            net.road(mv.incoming).lanes.iter().map(|&l| running_within(world, l, Some(l_meters))).sum::<u32>()
        })
        .sum()
}

/// Full observation of one signalized intersection.
pub fn observe(world: &World, node: usize, t_duration: u32, mode: ObservationMode) -> IntersectionObservation {
    observe_with(world, node, t_duration, mode, ObserverOptions::default())
}

pub fn observe_with(
    world: &World,
    node: usize,
    t_duration: u32,
    mode: ObservationMode,
    opts: ObserverOptions,
) -> IntersectionObservation {
    let net = world.network();
    let n = &net.intersections[node];
    debug_assert!(n.is_signalized(), "observation target must be signalized");
    let si = world.signal_slot(node).expect("signalized intersection has a signal slot");
    let sig = world.signal(si);

    let movements: Vec<MovementState> = (0..n.movements.len())
        .map(|mi| MovementState {
            efficient_pressure: efficient_pressure(world, node, mi),
            effective_running: movement_running(world, node, mi, mode, t_duration, opts),
        })
        .collect();

    let mut pressures = Vec::with_capacity(PHASE_COUNT);
    let mut classic = Vec::with_capacity(PHASE_COUNT);
    let mut demand = Vec::with_capacity(PHASE_COUNT);
    for phase in &n.phases {
        pressures.push(phase.movements.iter().map(|&mi| movements[mi].efficient_pressure).sum());
        classic.push(phase.movements.iter().map(|&mi| classic_movement_pressure(world, node, mi)).sum());
        demand.push(phase.movements.iter().map(|&mi| movements[mi].effective_running).sum());
    }

    IntersectionObservation {
        node,
        current_phase: sig.active,
        phase_elapsed: sig.elapsed,
        movements,
        phase_pressure: pressures,
        classic_phase_pressure: classic,
        phase_demand: demand,
        intersection_pressure: intersection_pressure(world, node),
        incoming_queue: n.incoming_lanes.iter().map(|&l| queue_count(world, l)).sum(),
    }
}
