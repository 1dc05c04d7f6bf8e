//! Loader for CityFlow-format roadnet and flow JSON files.
//!
//! Only the subset needed here is interpreted: road endpoints and polylines,
//! lane counts and speeds, road links with lane links, and the virtual flag.
//! Curved geometry and per-lane speed overrides are parsed and ignored with a
//! logged warning. Original light phases are discarded: every signalized
//! intersection is remapped onto the fixed four-phase plan, and the remapping
//! is recorded in the network's provenance string.

use super::grid::build_movements_and_phases;
use super::{
    FlowEntry, FlowSpec, Heading, Intersection, IntersectionId, Lane, LaneId, NetworkError, Road,
    RoadId, TrafficNetwork, TurnKind, TurnPermissions,
};
use log::warn;
use serde::Deserialize;
use std::collections::HashMap;

#[derive(Debug, Deserialize)]
struct CfRoadnet {
    intersections: Vec<CfIntersection>,
    roads: Vec<CfRoad>,
}

#[derive(Debug, Deserialize)]
struct CfIntersection {
    id: String,
    #[serde(rename = "virtual", default)]
    virtual_field: Option<bool>,
    #[serde(rename = "roadLinks", default)]
    road_links: Vec<CfRoadLink>,
    #[serde(rename = "trafficLight", default)]
    traffic_light: Option<CfTrafficLight>,
}

impl CfIntersection {
    fn is_virtual(&self) -> bool {
        self.virtual_field.unwrap_or(false)
    }
}

#[derive(Debug, Deserialize)]
struct CfRoadLink {
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "startRoad")]
    start_road: String,
    #[serde(rename = "endRoad")]
    end_road: String,
    #[serde(rename = "laneLinks", default)]
    lane_links: Vec<CfLaneLink>,
}

#[derive(Debug, Deserialize)]
struct CfLaneLink {
    #[serde(rename = "startLaneIndex")]
    start_lane_index: i64,
}

#[derive(Debug, Deserialize)]
struct CfTrafficLight {
    #[serde(rename = "lightphases", default)]
    lightphases: Vec<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct CfRoad {
    id: String,
    points: Vec<CfPoint>,
    lanes: Vec<CfLane>,
    #[serde(rename = "startIntersection")]
    start_intersection: String,
    #[serde(rename = "endIntersection")]
    end_intersection: String,
}

#[derive(Debug, Deserialize, Clone, Copy)]
struct CfPoint {
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
struct CfLane {
    #[serde(rename = "maxSpeed")]
    max_speed: f64,
}

#[derive(Debug, Deserialize)]
struct CfFlowEntry {
    #[serde(default)]
    vehicle: Option<CfVehicle>,
    route: Vec<String>,
    #[serde(default)]
    interval: Option<f64>,
    #[serde(rename = "startTime", default)]
    start_time: f64,
    #[serde(rename = "endTime", default)]
    end_time: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct CfVehicle {
    #[serde(default)]
    length: Option<f64>,
    #[serde(rename = "minGap", default)]
    min_gap: Option<f64>,
}

fn parse_json<'a, T: Deserialize<'a>>(bytes: &'a [u8], source_name: &'static str) -> Result<T, NetworkError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| NetworkError::Parse {
        source_name,
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn turn_kind(kind: &str) -> Result<TurnKind, NetworkError> {
    match kind {
        "turn_left" => Ok(TurnKind::Left),
        "go_straight" => Ok(TurnKind::Straight),
        "turn_right" => Ok(TurnKind::Right),
        other => Err(NetworkError::Unsupported(format!("road link type {other:?}"))),
    }
}

fn polyline_length(points: &[CfPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let dx = w[1].x - w[0].x;
            let dy = w[1].y - w[0].y;
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

/// Loads a CityFlow roadnet plus flow file into the internal model.
///
/// Phases are remapped onto the fixed four-phase scheme and right turns are
/// flagged always-permitted. Non-four-way signalized intersections are
/// rejected as unsupported.
pub fn load_cityflow(roadnet_bytes: &[u8], flow_bytes: &[u8]) -> Result<(TrafficNetwork, FlowSpec), NetworkError> {
    let roadnet: CfRoadnet = parse_json(roadnet_bytes, "roadnet")?;
    let cf_flow: Vec<CfFlowEntry> = parse_json(flow_bytes, "flow")?;

    let mut node_ids: HashMap<&str, IntersectionId> = HashMap::new();
    let mut intersections = Vec::with_capacity(roadnet.intersections.len());
    for cf in &roadnet.intersections {
        let id = IntersectionId(intersections.len() as u32);
        node_ids.insert(cf.id.as_str(), id);
        intersections.push(Intersection {
            id,
            name: cf.id.clone(),
            is_virtual: cf.is_virtual(),
            incoming_roads: Vec::new(),
            outgoing_roads: Vec::new(),
            incoming_lanes: Vec::new(),
            outgoing_lanes: Vec::new(),
            movements: Vec::new(),
            phases: Vec::new(),
        });
    }

    let mut road_ids: HashMap<&str, RoadId> = HashMap::new();
    let mut roads = Vec::with_capacity(roadnet.roads.len());
    let mut lanes = Vec::new();
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for cf in &roadnet.roads {
        let id = RoadId(roads.len() as u32);
        road_ids.insert(cf.id.as_str(), id);
        if cf.points.len() < 2 {
            return Err(NetworkError::Invariant(format!("road {} has fewer than 2 points", cf.id)));
        }
        for p in &cf.points {
            min_x = min_x.min(p.x);
            min_y = min_y.min(p.y);
            max_x = max_x.max(p.x);
            max_y = max_y.max(p.y);
        }
        let last = cf.points[cf.points.len() - 1];
        let prev = cf.points[cf.points.len() - 2];
        let heading = Heading::from_vector(last.x - prev.x, last.y - prev.y);
        if cf.lanes.is_empty() {
            return Err(NetworkError::Invariant(format!("road {} has no lanes", cf.id)));
        }
        let max_speed = cf.lanes[0].max_speed;
        if cf.lanes.iter().any(|l| (l.max_speed - max_speed).abs() > 1e-9) {
            warn!("road {}: per-lane speed overrides ignored, using first lane's {max_speed} m/s", cf.id);
        }
        let from = *node_ids
            .get(cf.start_intersection.as_str())
            .ok_or_else(|| NetworkError::Invariant(format!("road {} references unknown intersection", cf.id)))?;
        let to = *node_ids
            .get(cf.end_intersection.as_str())
            .ok_or_else(|| NetworkError::Invariant(format!("road {} references unknown intersection", cf.id)))?;
        let mut lane_ids = Vec::with_capacity(cf.lanes.len());
        for index in 0..cf.lanes.len() {
            let lane_id = LaneId(lanes.len() as u32);
            lanes.push(Lane {
                id: lane_id,
                road: id,
                index: index as u8,
                turns: TurnPermissions::default(), // filled from road links below
            });
            lane_ids.push(lane_id);
        }
        roads.push(Road {
            id,
            name: cf.id.clone(),
            from,
            to,
            length: polyline_length(&cf.points),
            max_speed,
            heading,
            lanes: lane_ids.clone(),
        });
        intersections[from.0 as usize].outgoing_roads.push(id);
        intersections[from.0 as usize].outgoing_lanes.extend(lane_ids.iter().copied());
        intersections[to.0 as usize].incoming_roads.push(id);
        intersections[to.0 as usize].incoming_lanes.extend(lane_ids);
    }

    // Lane permissions come from the road links at each road's downstream end.
    let mut original_lightphases = 0usize;
    for cf in &roadnet.intersections {
        if let Some(tl) = &cf.traffic_light {
            original_lightphases += tl.lightphases.len();
        }
        for link in &cf.road_links {
            let turn = turn_kind(&link.kind)?;
            let start = *road_ids
                .get(link.start_road.as_str())
                .ok_or_else(|| NetworkError::Invariant(format!("road link references unknown road {}", link.start_road)))?;
            let road = &roads[start.0 as usize];
            for ll in &link.lane_links {
                let idx = ll.start_lane_index;
                if idx < 0 || idx as usize >= road.lanes.len() {
                    warn!("road link on {} references lane index {idx} out of range, skipping", link.start_road);
                    continue;
                }
                lanes[road.lanes[idx as usize].0 as usize].turns.set(turn);
            }
        }
    }
    // Roads with no downstream links (boundary exits) permit everything.
    for road in &roads {
        let any = road.lanes.iter().any(|&l| !lanes[l.0 as usize].turns.is_empty());
        if !any {
            for &l in &road.lanes {
                lanes[l.0 as usize].turns = TurnPermissions::all();
            }
        }
    }

    // Build canonical movements and the remapped phase plan, then cross-check
    // each declared road link against the heading-derived movement table.
    let mut remapped = 0usize;
    for (idx, cf) in roadnet.intersections.iter().enumerate() {
        if cf.is_virtual() {
            continue;
        }
        build_movements_and_phases(&mut intersections[idx], &roads, &lanes)?;
        remapped += 1;
        for link in &cf.road_links {
            let turn = turn_kind(&link.kind)?;
            let start = road_ids[link.start_road.as_str()];
            let end = road_ids[link.end_road.as_str()];
            let heading = roads[start.0 as usize].heading;
            let slot = super::movement_slot(heading, turn);
            let mv = &intersections[idx].movements[slot];
            if mv.outgoing != end {
                return Err(NetworkError::Unsupported(format!(
                    "intersection {}: {:?} link {} -> {} disagrees with road headings",
                    cf.id, turn, link.start_road, link.end_road
                )));
            }
        }
    }

    let provenance = format!(
        "cityflow ingest: {} intersections ({} signalized, phases remapped to \
         [NS-straight,EW-straight,NS-left,EW-left] from {} source lightphases), {} roads",
        intersections.len(),
        remapped,
        original_lightphases,
        roads.len()
    );

    let net = TrafficNetwork::assemble(
        intersections,
        roads,
        lanes,
        ((min_x, min_y), (max_x, max_y)),
        provenance,
    );
    net.validate()?;

    let mut entries = Vec::with_capacity(cf_flow.len());
    for (idx, cf) in cf_flow.iter().enumerate() {
        let mut route = Vec::with_capacity(cf.route.len());
        for name in &cf.route {
            let id = road_ids.get(name.as_str()).ok_or_else(|| NetworkError::DisconnectedRoute {
                index: idx,
                reason: format!("route references unknown road {name:?}"),
            })?;
            route.push(*id);
        }
        // CityFlow uses endTime = -1 for "repeat forever".
        let end_time = cf.end_time.filter(|&t| t >= 0.0);
        entries.push(FlowEntry {
            start_time: cf.start_time,
            route,
            interval: cf.interval,
            end_time,
            vehicle_length: cf.vehicle.as_ref().and_then(|v| v.length),
            min_gap: cf.vehicle.as_ref().and_then(|v| v.min_gap),
        });
    }
    let flow = FlowSpec { entries };
    flow.validate(&net)?;
    Ok((net, flow))
}
