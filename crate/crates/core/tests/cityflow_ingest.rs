//! CityFlow ingestion against programmatically built dataset-shaped files.

mod common;

use atc_core::network::{load_cityflow, NetworkError, TurnKind};
use common::{cityflow_flow, cityflow_grid_roadnet};

fn to_bytes(v: &serde_json::Value) -> Vec<u8> {
    serde_json::to_vec(v).unwrap()
}

#[test]
fn jinan_shaped_grid_has_12_signalized() {
    // 3x4 grid, 400 m east-west and 800 m north-south segments.
    let roadnet = cityflow_grid_roadnet(3, 4, 400.0, 800.0, 11.11);
    let flow = cityflow_flow(&[]);
    let (net, flowspec) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap();
    assert_eq!(net.signalized_count(), 12);
    assert!(flowspec.entries.is_empty());
    net.validate().unwrap();
    assert!(net.provenance.contains("remapped"));
}

#[test]
fn hangzhou_shaped_grid_has_16_signalized() {
    let roadnet = cityflow_grid_roadnet(4, 4, 800.0, 600.0, 11.11);
    let flow = cityflow_flow(&[]);
    let (net, _) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap();
    assert_eq!(net.signalized_count(), 16);
}

#[test]
fn phases_are_remapped_onto_four_phase_plan() {
    let roadnet = cityflow_grid_roadnet(1, 1, 300.0, 300.0, 11.11);
    let (net, _) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&cityflow_flow(&[]))).unwrap();
    let (_, node) = net.signalized().next().unwrap();
    assert_eq!(node.phases.len(), 4);
    assert_eq!(node.movements.len(), 12);
    for phase in &node.phases {
        assert_eq!(phase.movements.len(), 2);
        for &mi in &phase.movements {
            assert_ne!(node.movements[mi].turn, TurnKind::Right);
        }
    }
}

#[test]
fn flow_routes_resolve_and_validate() {
    let roadnet = cityflow_grid_roadnet(1, 2, 300.0, 300.0, 11.11);
    // South entry at (0,0), straight through to the north exit.
    let flow = cityflow_flow(&[(0.0, vec!["road_0_-1_0_0".into(), "road_0_0_0_1".into()])]);
    let (net, flowspec) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap();
    assert_eq!(flowspec.entries.len(), 1);
    flowspec.validate(&net).unwrap();
}

#[test]
fn disconnected_route_names_the_entry() {
    let roadnet = cityflow_grid_roadnet(1, 2, 300.0, 300.0, 11.11);
    // Two roads that do not share a node.
    let flow = cityflow_flow(&[
        (0.0, vec!["road_0_-1_0_0".into(), "road_0_0_0_1".into()]),
        (1.0, vec!["road_0_-1_0_0".into(), "road_1_0_1_1".into()]),
    ]);
    let err = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap_err();
    match err {
        NetworkError::DisconnectedRoute { index, .. } => assert_eq!(index, 1),
        other => panic!("expected disconnected route, got {other:?}"),
    }
}

#[test]
fn unknown_road_in_route_is_an_error() {
    let roadnet = cityflow_grid_roadnet(1, 1, 300.0, 300.0, 11.11);
    let flow = cityflow_flow(&[(0.0, vec!["road_nowhere".into()])]);
    let err = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap_err();
    assert!(matches!(err, NetworkError::DisconnectedRoute { index: 0, .. }));
}

#[test]
fn three_way_signalized_is_unsupported() {
    let mut roadnet = cityflow_grid_roadnet(1, 1, 300.0, 300.0, 11.11);
    // Drop the two roads touching the western virtual node and every link
    // referencing them, leaving a three-way signalized intersection.
    let gone = ["road_0_0_-1_0", "road_-1_0_0_0"];
    let roads = roadnet["roads"].as_array_mut().unwrap();
    roads.retain(|r| !gone.contains(&r["id"].as_str().unwrap()));
    let intersections = roadnet["intersections"].as_array_mut().unwrap();
    intersections.retain(|i| i["id"] != "virtual_-1_0");
    for node in intersections.iter_mut() {
        let node_roads = node["roads"].as_array_mut().unwrap();
        node_roads.retain(|r| !gone.contains(&r.as_str().unwrap()));
        let links = node["roadLinks"].as_array_mut().unwrap();
        links.retain(|l| {
            !gone.contains(&l["startRoad"].as_str().unwrap())
                && !gone.contains(&l["endRoad"].as_str().unwrap())
        });
    }
    let err = load_cityflow(&to_bytes(&roadnet), &to_bytes(&cityflow_flow(&[]))).unwrap_err();
    assert!(matches!(err, NetworkError::Unsupported(_)), "got {err:?}");
}

#[test]
fn loaded_network_roundtrips_canonical_json() {
    let roadnet = cityflow_grid_roadnet(2, 2, 350.0, 350.0, 11.11);
    let (net, _) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&cityflow_flow(&[]))).unwrap();
    let text = net.to_canonical_json();
    let back = atc_core::TrafficNetwork::from_canonical_json(&text).unwrap();
    assert_eq!(net, back);
}

#[test]
fn interval_flow_entries_expand_to_streams() {
    let roadnet = cityflow_grid_roadnet(1, 1, 300.0, 300.0, 11.11);
    let flow = serde_json::json!([{
        "vehicle": { "length": 5.0, "minGap": 2.5, "maxSpeed": 11.11 },
        "route": ["road_0_-1_0_0", "road_0_0_0_1"],
        "interval": 10.0,
        "startTime": 0,
        "endTime": 30,
    }]);
    let (_, flowspec) = load_cityflow(&to_bytes(&roadnet), &to_bytes(&flow)).unwrap();
    let arrivals = flowspec.expand(3600.0);
    assert_eq!(arrivals.len(), 4, "arrivals at 0, 10, 20, 30");
}
