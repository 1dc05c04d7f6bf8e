//! Shared test support: a programmatic CityFlow-format JSON builder mirroring
//! the public dataset layout (grid of four-way signalized intersections with
//! virtual boundary nodes), and random world seeding helpers.

use serde_json::{json, Value};

/// Builds a CityFlow-format roadnet JSON for a rows x cols grid with 3-lane
/// roads. Lane 0 turns left, lane 1 goes straight, lane 2 turns right, as in
/// the public datasets.
pub fn cityflow_grid_roadnet(rows: i64, cols: i64, ew_len: f64, ns_len: f64, max_speed: f64) -> Value {
    let node_name = |c: i64, r: i64| -> String {
        if c >= 0 && c < cols && r >= 0 && r < rows {
            format!("intersection_{c}_{r}")
        } else {
            format!("virtual_{c}_{r}")
        }
    };
    let point_of = |c: i64, r: i64| json!({ "x": c as f64 * ew_len, "y": r as f64 * ns_len });
    let road_name = |c1: i64, r1: i64, c2: i64, r2: i64| format!("road_{c1}_{r1}_{c2}_{r2}");

    // (dc, dr) neighbor offsets: N, E, S, W in travel direction.
    let dirs = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)];

    let mut roads = Vec::new();
    let mut road_pairs = std::collections::BTreeSet::new();
    for r in 0..rows {
        for c in 0..cols {
            for &(dc, dr) in &dirs {
                let (nc, nr) = (c + dc, r + dr);
                // Both directions between this node and each neighbor.
                for ((ac, ar), (bc, br)) in [((c, r), (nc, nr)), ((nc, nr), (c, r))] {
                    if !road_pairs.insert(((ac, ar), (bc, br))) {
                        continue;
                    }
                    roads.push(json!({
                        "id": road_name(ac, ar, bc, br),
                        "points": [point_of(ac, ar), point_of(bc, br)],
                        "lanes": [
                            { "width": 3.0, "maxSpeed": max_speed },
                            { "width": 3.0, "maxSpeed": max_speed },
                            { "width": 3.0, "maxSpeed": max_speed }
                        ],
                        "startIntersection": node_name(ac, ar),
                        "endIntersection": node_name(bc, br),
                    }));
                }
            }
        }
    }

    let mut intersections = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let mut node_roads = Vec::new();
            let mut road_links = Vec::new();
            for &(dc, dr) in &dirs {
                let (nc, nr) = (c + dc, r + dr);
                node_roads.push(road_name(c, r, nc, nr));
                node_roads.push(road_name(nc, nr, c, r));
                // Incoming road from (nc,nr); its travel heading is (-dc,-dr).
                let start = road_name(nc, nr, c, r);
                let (hc, hr) = (-dc, -dr);
                // left: ccw rotation of (hc,hr); right: cw.
                let turns = [
                    ("turn_left", (-hr, hc), 0),
                    ("go_straight", (hc, hr), 1),
                    ("turn_right", (hr, -hc), 2),
                ];
                for (kind, (oc, or), lane_idx) in turns {
                    let end = road_name(c, r, c + oc, r + or);
                    let lane_links: Vec<Value> = (0..3)
                        .map(|end_lane| json!({ "startLaneIndex": lane_idx, "endLaneIndex": end_lane, "points": [] }))
                        .collect();
                    road_links.push(json!({
                        "type": kind,
                        "startRoad": start,
                        "endRoad": end,
                        "direction": 0,
                        "laneLinks": lane_links,
                    }));
                }
            }
            // Source-style 8-phase plan; the loader remaps it anyway.
            let lightphases: Vec<Value> = (0..8)
                .map(|i| json!({ "time": 30, "availableRoadLinks": [i % road_links.len()] }))
                .collect();
            intersections.push(json!({
                "id": node_name(c, r),
                "point": point_of(c, r),
                "width": 10.0,
                "roads": node_roads,
                "roadLinks": road_links,
                "trafficLight": { "roadLinkIndices": [], "lightphases": lightphases },
                "virtual": false,
            }));
        }
    }
    // Virtual boundary nodes.
    let mut seen = std::collections::BTreeSet::new();
    for r in 0..rows {
        for c in 0..cols {
            for &(dc, dr) in &dirs {
                let (nc, nr) = (c + dc, r + dr);
                if nc >= 0 && nc < cols && nr >= 0 && nr < rows {
                    continue;
                }
                if !seen.insert((nc, nr)) {
                    continue;
                }
                intersections.push(json!({
                    "id": node_name(nc, nr),
                    "point": point_of(nc, nr),
                    "width": 0.0,
                    "roads": [road_name(c, r, nc, nr), road_name(nc, nr, c, r)],
                    "roadLinks": [],
                    "trafficLight": { "lightphases": [] },
                    "virtual": true,
                }));
            }
        }
    }

    json!({ "intersections": intersections, "roads": roads })
}

/// A CityFlow flow file: each entry is (startTime, route) with the standard
/// vehicle block.
pub fn cityflow_flow(entries: &[(f64, Vec<String>)]) -> Value {
    let list: Vec<Value> = entries
        .iter()
        .map(|(t, route)| {
            json!({
                "vehicle": {
                    "length": 5.0,
                    "width": 2.0,
                    "maxPosAcc": 2.0,
                    "maxNegAcc": 4.5,
                    "usualPosAcc": 2.0,
                    "usualNegAcc": 4.5,
                    "minGap": 2.5,
                    "maxSpeed": 11.11,
                    "headwayTime": 1.5
                },
                "route": route,
                "interval": 1.0,
                "startTime": t,
                "endTime": t,
            })
        })
        .collect();
    json!(list)
}
