//! Road-network data model and ingestion.
//!
//! A [`TrafficNetwork`] is a directed graph: nodes are intersections (either
//! signalized or virtual boundary nodes where traffic enters and leaves),
//! edges are roads, and each road carries an ordered list of lanes. Signalized
//! intersections own their traffic movements and the fixed four-phase signal
//! plan. Networks come from CityFlow-format JSON files ([`load_cityflow`]) or
//! the synthetic grid generator ([`generate_grid`]).

mod cityflow;
mod flow;
mod grid;

pub use cityflow::load_cityflow;
pub use flow::{generate_poisson_flow, PoissonFlowConfig, TurnWeights};
pub use grid::{generate_grid, GridSpec};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Index of a road in [`TrafficNetwork::roads`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoadId(pub u32);

/// Global lane index in [`TrafficNetwork::lanes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LaneId(pub u32);

/// Index of an intersection (signalized or boundary) in [`TrafficNetwork::intersections`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntersectionId(pub u32);

/// Travel heading of a road, snapped to the nearest compass axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    /// Heading after a left turn (counterclockwise quarter turn).
    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    /// Heading after a right turn (clockwise quarter turn).
    pub fn right(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    /// Snaps a displacement vector to the dominant axis direction.
    pub fn from_vector(dx: f64, dy: f64) -> Heading {
        if dx.abs() >= dy.abs() {
            if dx >= 0.0 {
                Heading::East
            } else {
                Heading::West
            }
        } else if dy >= 0.0 {
            Heading::North
        } else {
            Heading::South
        }
    }
}

/// Turn executed by a movement across an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TurnKind {
    Left,
    Straight,
    Right,
}

impl TurnKind {
    pub const ALL: [TurnKind; 3] = [TurnKind::Left, TurnKind::Straight, TurnKind::Right];

    pub fn index(self) -> usize {
        match self {
            TurnKind::Left => 0,
            TurnKind::Straight => 1,
            TurnKind::Right => 2,
        }
    }
}

/// Which turns a lane permits at the downstream end of its road.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPermissions {
    pub left: bool,
    pub straight: bool,
    pub right: bool,
}

impl TurnPermissions {
    pub fn all() -> Self {
        TurnPermissions { left: true, straight: true, right: true }
    }

    pub fn only(turn: TurnKind) -> Self {
        let mut p = TurnPermissions::default();
        p.set(turn);
        p
    }

    pub fn set(&mut self, turn: TurnKind) {
        match turn {
            TurnKind::Left => self.left = true,
            TurnKind::Straight => self.straight = true,
            TurnKind::Right => self.right = true,
        }
    }

    pub fn allows(&self, turn: TurnKind) -> bool {
        match turn {
            TurnKind::Left => self.left,
            TurnKind::Straight => self.straight,
            TurnKind::Right => self.right,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.left || self.straight || self.right)
    }
}

/// A single lane of a road. Lane length equals the road length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub road: RoadId,
    /// Position within the road, 0 = innermost (leftmost in right-hand traffic).
    pub index: u8,
    pub turns: TurnPermissions,
}

/// A directed road with one upstream and one downstream endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub id: RoadId,
    pub name: String,
    pub from: IntersectionId,
    pub to: IntersectionId,
    /// Length in meters; every lane of the road has this length.
    pub length: f64,
    /// Speed limit in meters per second (the V_max for vehicles on this road).
    pub max_speed: f64,
    pub heading: Heading,
    pub lanes: Vec<LaneId>,
}

/// Traffic movement from one incoming road to one outgoing road.
///
/// `in_lanes` are the lanes of the incoming road whose permissions include the
/// movement's turn (the M used lanes); `out_lanes` are all lanes of the
/// downstream road (the N used lanes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movement {
    pub incoming: RoadId,
    pub outgoing: RoadId,
    pub turn: TurnKind,
    pub in_lanes: Vec<LaneId>,
    pub out_lanes: Vec<LaneId>,
}

/// A signal phase: the set of movements granted green together.
///
/// `movements` holds indices into the owning intersection's movement list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: u8,
    pub movements: Vec<usize>,
}

/// Signal plan order is fixed so the phase index doubles as the action index:
/// 0 = north-south straight, 1 = east-west straight, 2 = north-south left,
/// 3 = east-west left. Right turns are always permitted and never signalized.
pub const PHASE_COUNT: usize = 4;

/// Movements per signalized four-way intersection under the canonical
/// ordering: heading-major (N, E, S, W), turn-minor (left, straight, right).
pub const MOVEMENTS_PER_INTERSECTION: usize = 12;

/// Canonical movement index for a (heading, turn) pair.
pub fn movement_slot(heading: Heading, turn: TurnKind) -> usize {
    heading.index() * 3 + turn.index()
}

/// An intersection node. Boundary (virtual) nodes carry no movements or
/// phases; they only source and sink traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: IntersectionId,
    pub name: String,
    pub is_virtual: bool,
    pub incoming_roads: Vec<RoadId>,
    pub outgoing_roads: Vec<RoadId>,
    pub incoming_lanes: Vec<LaneId>,
    pub outgoing_lanes: Vec<LaneId>,
    pub movements: Vec<Movement>,
    pub phases: Vec<Phase>,
}

impl Intersection {
    pub fn is_signalized(&self) -> bool {
        !self.is_virtual
    }
}

/// The full road network plus validity metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficNetwork {
    pub intersections: Vec<Intersection>,
    pub roads: Vec<Road>,
    pub lanes: Vec<Lane>,
    /// ((min_x, min_y), (max_x, max_y)) in meters.
    pub bounding_box: ((f64, f64), (f64, f64)),
    /// Where the network came from and any remapping applied during ingestion.
    pub provenance: String,
    #[serde(skip)]
    movement_lookup: HashMap<(RoadId, RoadId), (u32, u32)>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {source_name} JSON at {path}: {message}")]
    Parse { source_name: &'static str, path: String, message: String },
    #[error("route {index} is not a connected path: {reason}")]
    DisconnectedRoute { index: usize, reason: String },
    #[error("unsupported network feature: {0}")]
    Unsupported(String),
    #[error("network invariant violated: {0}")]
    Invariant(String),
}

impl TrafficNetwork {
    /// Assembles a network from parts, building the movement lookup table.
    pub fn assemble(
        intersections: Vec<Intersection>,
        roads: Vec<Road>,
        lanes: Vec<Lane>,
        bounding_box: ((f64, f64), (f64, f64)),
        provenance: String,
    ) -> TrafficNetwork {
        let mut net = TrafficNetwork {
            intersections,
            roads,
            lanes,
            bounding_box,
            provenance,
            movement_lookup: HashMap::new(),
        };
        net.rebuild_lookup();
        net
    }

    fn rebuild_lookup(&mut self) {
        self.movement_lookup.clear();
        for (ni, node) in self.intersections.iter().enumerate() {
            for (mi, mv) in node.movements.iter().enumerate() {
                self.movement_lookup.insert((mv.incoming, mv.outgoing), (ni as u32, mi as u32));
            }
        }
    }

    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.0 as usize]
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0 as usize]
    }

    pub fn lane_length(&self, id: LaneId) -> f64 {
        self.road(self.lane(id).road).length
    }

    pub fn intersection(&self, id: IntersectionId) -> &Intersection {
        &self.intersections[id.0 as usize]
    }

    /// Signalized intersections in id order, paired with their index in
    /// [`TrafficNetwork::intersections`].
    pub fn signalized(&self) -> impl Iterator<Item = (usize, &Intersection)> {
        self.intersections.iter().enumerate().filter(|(_, n)| n.is_signalized())
    }

    pub fn signalized_count(&self) -> usize {
        self.signalized().count()
    }

    /// Looks up the movement (l, m) and returns (intersection index, movement index).
    pub fn movement_between(&self, from: RoadId, to: RoadId) -> Option<(usize, usize)> {
        self.movement_lookup.get(&(from, to)).map(|&(n, m)| (n as usize, m as usize))
    }

    /// True if the road ends at a boundary node (vehicles leaving it exit the
    /// network). Such roads contribute zero downstream queue to pressures.
    pub fn is_sink_road(&self, id: RoadId) -> bool {
        self.intersection(self.road(id).to).is_virtual
    }

    /// True if the road starts at a boundary node (traffic can enter on it).
    pub fn is_entry_road(&self, id: RoadId) -> bool {
        self.intersection(self.road(id).from).is_virtual
    }

    pub fn entry_roads(&self) -> Vec<RoadId> {
        self.roads.iter().filter(|r| self.is_entry_road(r.id)).map(|r| r.id).collect()
    }

    pub fn exit_roads(&self) -> Vec<RoadId> {
        self.roads.iter().filter(|r| self.is_sink_road(r.id)).map(|r| r.id).collect()
    }

    /// Maximum speed over all roads, the network-wide V_max.
    pub fn max_speed(&self) -> f64 {
        self.roads.iter().fold(0.0, |acc, r| acc.max(r.max_speed))
    }

    /// Canonical JSON form used for round-trip checks and the `validate` CLI verb.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_canonical_json(text: &str) -> Result<TrafficNetwork, NetworkError> {
        let mut net: TrafficNetwork = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
            source_name: "network",
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        net.rebuild_lookup();
        Ok(net)
    }

    /// Structural validation: referential integrity plus the movement/phase
    /// scheme every signalized intersection must satisfy.
    pub fn validate(&self) -> Result<(), NetworkError> {
        for road in &self.roads {
            if road.length <= 0.0 {
                return Err(NetworkError::Invariant(format!("road {} has non-positive length", road.name)));
            }
            if road.max_speed <= 0.0 {
                return Err(NetworkError::Invariant(format!("road {} has non-positive max speed", road.name)));
            }
            if road.lanes.is_empty() {
                return Err(NetworkError::Invariant(format!("road {} has no lanes", road.name)));
            }
            if road.from.0 as usize >= self.intersections.len() || road.to.0 as usize >= self.intersections.len() {
                return Err(NetworkError::Invariant(format!("road {} references unknown endpoint", road.name)));
            }
        }
        for lane in &self.lanes {
            if lane.turns.is_empty() {
                return Err(NetworkError::Invariant(format!("lane {:?} permits no turns", lane.id)));
            }
            let road = self.road(lane.road);
            if !road.lanes.contains(&lane.id) {
                return Err(NetworkError::Invariant(format!("lane {:?} not listed by its road", lane.id)));
            }
        }
        for node in self.intersections.iter().filter(|n| n.is_signalized()) {
            if node.movements.len() != MOVEMENTS_PER_INTERSECTION {
                return Err(NetworkError::Invariant(format!(
                    "intersection {} has {} movements, expected {}",
                    node.name,
                    node.movements.len(),
                    MOVEMENTS_PER_INTERSECTION
                )));
            }
            if node.phases.len() != PHASE_COUNT {
                return Err(NetworkError::Invariant(format!(
                    "intersection {} has {} phases, expected {}",
                    node.name,
                    node.phases.len(),
                    PHASE_COUNT
                )));
            }
            for mv in &node.movements {
                if mv.in_lanes.is_empty() || mv.out_lanes.is_empty() {
                    return Err(NetworkError::Invariant(format!(
                        "intersection {} movement has empty used-lane set",
                        node.name
                    )));
                }
                if !node.incoming_roads.contains(&mv.incoming) || !node.outgoing_roads.contains(&mv.outgoing) {
                    return Err(NetworkError::Invariant(format!(
                        "intersection {} movement references non-adjacent road",
                        node.name
                    )));
                }
            }
            // The 4 phases must cover the 8 left/straight movements exactly
            // once, and right turns must not appear in any phase.
            let mut seen = vec![0usize; node.movements.len()];
            for phase in &node.phases {
                for &mi in &phase.movements {
                    seen[mi] += 1;
                    if node.movements[mi].turn == TurnKind::Right {
                        return Err(NetworkError::Invariant(format!(
                            "intersection {} signalizes a right turn",
                            node.name
                        )));
                    }
                }
            }
            for (mi, mv) in node.movements.iter().enumerate() {
                let expected = if mv.turn == TurnKind::Right { 0 } else { 1 };
                if seen[mi] != expected {
                    return Err(NetworkError::Invariant(format!(
                        "intersection {} movement {} appears in {} phases, expected {}",
                        node.name, mi, seen[mi], expected
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One flow-file entry: a scheduled entry time and a pre-planned route, with
/// the optional repeat fields CityFlow flow files carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    /// Scheduled entry time in seconds.
    pub start_time: f64,
    /// Route as road ids from an entry road to an exit road.
    pub route: Vec<RoadId>,
    /// Seconds between repeated arrivals, when the entry describes a stream.
    pub interval: Option<f64>,
    /// Last second (inclusive) at which a repeated arrival may be scheduled.
    pub end_time: Option<f64>,
    pub vehicle_length: Option<f64>,
    pub min_gap: Option<f64>,
}

/// The demand side of a scenario: every vehicle that will ever be scheduled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub entries: Vec<FlowEntry>,
}

/// A single scheduled arrival after expanding repeat intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub time: f64,
    /// Index into [`FlowSpec::entries`] for the route and vehicle parameters.
    pub entry: usize,
}

impl FlowSpec {
    pub fn vehicle_count(&self, horizon: f64) -> usize {
        self.expand(horizon).len()
    }

    /// Expands repeat intervals into individual arrivals with time < horizon,
    /// sorted by (time, entry index).
    pub fn expand(&self, horizon: f64) -> Vec<Arrival> {
        let mut arrivals = Vec::new();
        for (idx, entry) in self.entries.iter().enumerate() {
            match entry.interval {
                Some(interval) if interval > 0.0 => {
                    let end = entry.end_time.unwrap_or(horizon).min(horizon);
                    let mut t = entry.start_time;
                    while t < horizon && t <= end {
                        arrivals.push(Arrival { time: t, entry: idx });
                        t += interval;
                    }
                }
                _ => {
                    if entry.start_time < horizon {
                        arrivals.push(Arrival { time: entry.start_time, entry: idx });
                    }
                }
            }
        }
        arrivals.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap().then(a.entry.cmp(&b.entry)));
        arrivals
    }

    /// Checks every route: entry times non-negative, first road at a boundary,
    /// consecutive roads joined by an existing movement, last road exiting at
    /// a boundary. Errors name the offending entry index.
    pub fn validate(&self, net: &TrafficNetwork) -> Result<(), NetworkError> {
        for (idx, entry) in self.entries.iter().enumerate() {
            if entry.start_time < 0.0 {
                return Err(NetworkError::DisconnectedRoute {
                    index: idx,
                    reason: "negative entry time".into(),
                });
            }
            if entry.route.is_empty() {
                return Err(NetworkError::DisconnectedRoute { index: idx, reason: "empty route".into() });
            }
            for &r in &entry.route {
                if r.0 as usize >= net.roads.len() {
                    return Err(NetworkError::DisconnectedRoute {
                        index: idx,
                        reason: format!("unknown road id {}", r.0),
                    });
                }
            }
            let first = entry.route[0];
            if !net.is_entry_road(first) {
                return Err(NetworkError::DisconnectedRoute {
                    index: idx,
                    reason: format!("first road {} does not start at a boundary", net.road(first).name),
                });
            }
            for pair in entry.route.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                if net.road(a).to != net.road(b).from {
                    return Err(NetworkError::DisconnectedRoute {
                        index: idx,
                        reason: format!("roads {} and {} do not share a node", net.road(a).name, net.road(b).name),
                    });
                }
                if net.movement_between(a, b).is_none() {
                    return Err(NetworkError::DisconnectedRoute {
                        index: idx,
                        reason: format!("no movement from {} to {}", net.road(a).name, net.road(b).name),
                    });
                }
            }
            let last = *entry.route.last().unwrap();
            if !net.is_sink_road(last) {
                return Err(NetworkError::DisconnectedRoute {
                    index: idx,
                    reason: format!("last road {} does not end at a boundary", net.road(last).name),
                });
            }
        }
        Ok(())
    }
}
