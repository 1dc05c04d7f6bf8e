//! Synthetic grid networks: rows x cols signalized four-way intersections
//! with boundary roads ending at virtual source/sink nodes.

use super::{
    movement_slot, Heading, Intersection, IntersectionId, Lane, LaneId, Movement, NetworkError,
    Phase, Road, RoadId, TrafficNetwork, TurnKind, TurnPermissions, MOVEMENTS_PER_INTERSECTION,
};

/// Parameters for [`generate_grid`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    /// Length of east-west road segments in meters.
    pub ew_length: f64,
    /// Length of north-south road segments in meters.
    pub ns_length: f64,
    pub lanes_per_road: u32,
    /// Speed limit applied to every road, meters per second.
    pub max_speed: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(NetworkError::InvalidArgument("grid dimensions must be >= 1".into()));
        }
        if self.ew_length <= 0.0 || self.ns_length <= 0.0 {
            return Err(NetworkError::InvalidArgument("road lengths must be positive".into()));
        }
        if self.lanes_per_road == 0 {
            return Err(NetworkError::InvalidArgument("lanes_per_road must be >= 1".into()));
        }
        if self.max_speed <= 0.0 {
            return Err(NetworkError::InvalidArgument("max_speed must be positive".into()));
        }
        Ok(())
    }
}

/// Turn permissions for lane `index` of a road with `total` lanes. Lane 0 is
/// the innermost lane: it takes lefts, the outermost takes rights, middle
/// lanes go straight. Narrow roads share permissions so every turn stays
/// reachable.
fn lane_permissions(index: u32, total: u32) -> TurnPermissions {
    if total == 1 {
        return TurnPermissions::all();
    }
    if total == 2 {
        return if index == 0 {
            TurnPermissions { left: true, straight: true, right: false }
        } else {
            TurnPermissions { left: false, straight: true, right: true }
        };
    }
    if index == 0 {
        TurnPermissions::only(TurnKind::Left)
    } else if index == total - 1 {
        TurnPermissions::only(TurnKind::Right)
    } else {
        TurnPermissions::only(TurnKind::Straight)
    }
}

struct Builder {
    intersections: Vec<Intersection>,
    roads: Vec<Road>,
    lanes: Vec<Lane>,
}

impl Builder {
    fn add_node(&mut self, name: String, is_virtual: bool) -> IntersectionId {
        let id = IntersectionId(self.intersections.len() as u32);
        self.intersections.push(Intersection {
            id,
            name,
            is_virtual,
            incoming_roads: Vec::new(),
            outgoing_roads: Vec::new(),
            incoming_lanes: Vec::new(),
            outgoing_lanes: Vec::new(),
            movements: Vec::new(),
            phases: Vec::new(),
        });
        id
    }

    fn add_road(
        &mut self,
        from: IntersectionId,
        to: IntersectionId,
        length: f64,
        max_speed: f64,
        heading: Heading,
        lane_count: u32,
    ) -> RoadId {
        let id = RoadId(self.roads.len() as u32);
        let name = format!(
            "road_{}_{}",
            self.intersections[from.0 as usize].name, self.intersections[to.0 as usize].name
        );
        let mut lane_ids = Vec::with_capacity(lane_count as usize);
        for index in 0..lane_count {
            let lane_id = LaneId(self.lanes.len() as u32);
            self.lanes.push(Lane {
                id: lane_id,
                road: id,
                index: index as u8,
                turns: lane_permissions(index, lane_count),
            });
            lane_ids.push(lane_id);
        }
        self.roads.push(Road { id, name, from, to, length, max_speed, heading, lanes: lane_ids.clone() });
        self.intersections[from.0 as usize].outgoing_roads.push(id);
        self.intersections[from.0 as usize].outgoing_lanes.extend(lane_ids.iter().copied());
        self.intersections[to.0 as usize].incoming_roads.push(id);
        self.intersections[to.0 as usize].incoming_lanes.extend(lane_ids);
        id
    }
}

/// Builds the canonical movement list and four-phase plan for a signalized
/// four-way intersection, from its incoming/outgoing roads keyed by heading.
pub(crate) fn build_movements_and_phases(
    node: &mut Intersection,
    roads: &[Road],
    lanes: &[Lane],
) -> Result<(), NetworkError> {
    let mut incoming_by_heading: [Option<RoadId>; 4] = [None; 4];
    let mut outgoing_by_heading: [Option<RoadId>; 4] = [None; 4];
    for &r in &node.incoming_roads {
        let h = roads[r.0 as usize].heading;
        if incoming_by_heading[h.index()].replace(r).is_some() {
            return Err(NetworkError::Unsupported(format!(
                "intersection {} has two incoming roads heading {:?}",
                node.name, h
            )));
        }
    }
    for &r in &node.outgoing_roads {
        let h = roads[r.0 as usize].heading;
        if outgoing_by_heading[h.index()].replace(r).is_some() {
            return Err(NetworkError::Unsupported(format!(
                "intersection {} has two outgoing roads heading {:?}",
                node.name, h
            )));
        }
    }
    if incoming_by_heading.iter().any(|r| r.is_none()) || outgoing_by_heading.iter().any(|r| r.is_none()) {
        return Err(NetworkError::Unsupported(format!(
            "intersection {} is not four-way; only four-way signalized intersections are supported",
            node.name
        )));
    }

    let mut movements = Vec::with_capacity(MOVEMENTS_PER_INTERSECTION);
    for heading in Heading::ALL {
        let incoming = incoming_by_heading[heading.index()].unwrap();
        for turn in TurnKind::ALL {
            let out_heading = match turn {
                TurnKind::Left => heading.left(),
                TurnKind::Straight => heading,
                TurnKind::Right => heading.right(),
            };
            let outgoing = outgoing_by_heading[out_heading.index()].unwrap();
            let mut in_lanes: Vec<LaneId> = roads[incoming.0 as usize]
                .lanes
                .iter()
                .copied()
                .filter(|&l| lanes[l.0 as usize].turns.allows(turn))
                .collect();
            if in_lanes.is_empty() {
                // No lane is marked for this turn; fall back to every lane so
                // the movement stays usable (M >= 1).
                in_lanes = roads[incoming.0 as usize].lanes.clone();
            }
            debug_assert_eq!(movements.len(), movement_slot(heading, turn));
            movements.push(Movement {
                incoming,
                outgoing,
                turn,
                in_lanes,
                out_lanes: roads[outgoing.0 as usize].lanes.clone(),
            });
        }
    }
    node.movements = movements;
    node.phases = standard_phases();
    Ok(())
}

/// The fixed phase plan over canonical movement slots:
/// [NS-straight, EW-straight, NS-left, EW-left].
pub(crate) fn standard_phases() -> Vec<Phase> {
    let ns_straight = vec![
        movement_slot(Heading::North, TurnKind::Straight),
        movement_slot(Heading::South, TurnKind::Straight),
    ];
    let ew_straight = vec![
        movement_slot(Heading::East, TurnKind::Straight),
        movement_slot(Heading::West, TurnKind::Straight),
    ];
    let ns_left = vec![
        movement_slot(Heading::North, TurnKind::Left),
        movement_slot(Heading::South, TurnKind::Left),
    ];
    let ew_left = vec![
        movement_slot(Heading::East, TurnKind::Left),
        movement_slot(Heading::West, TurnKind::Left),
    ];
    vec![
        Phase { index: 0, movements: ns_straight },
        Phase { index: 1, movements: ew_straight },
        Phase { index: 2, movements: ns_left },
        Phase { index: 3, movements: ew_left },
    ]
}

/// Generates a rows x cols grid. Every signalized intersection is four-way
/// with the canonical 12 movements and 4 phases; boundary roads terminate at
/// virtual source/sink nodes just outside the grid.
pub fn generate_grid(spec: &GridSpec) -> Result<TrafficNetwork, NetworkError> {
    spec.validate()?;
    let mut b = Builder { intersections: Vec::new(), roads: Vec::new(), lanes: Vec::new() };

    let rows = spec.rows as i64;
    let cols = spec.cols as i64;
    let mut grid_ids = vec![IntersectionId(0); (rows * cols) as usize];
    for row in 0..rows {
        for col in 0..cols {
            let id = b.add_node(format!("i_{}_{}", col, row), false);
            grid_ids[(row * cols + col) as usize] = id;
        }
    }
    let node_at = |col: i64, row: i64| grid_ids[(row * cols + col) as usize];

    // Neighbor directions as (dcol, drow, heading of travel toward neighbor).
    let dirs = [
        (0i64, 1i64, Heading::North),
        (1, 0, Heading::East),
        (0, -1, Heading::South),
        (-1, 0, Heading::West),
    ];

    let mut virtual_ids: std::collections::HashMap<(i64, i64), IntersectionId> =
        std::collections::HashMap::new();

    for row in 0..rows {
        for col in 0..cols {
            let here = node_at(col, row);
            for &(dc, dr, heading) in &dirs {
                let (nc, nr) = (col + dc, row + dr);
                let length = if dr == 0 { spec.ew_length } else { spec.ns_length };
                let inside = nc >= 0 && nc < cols && nr >= 0 && nr < rows;
                if inside {
                    // Interior roads built once, from the lower-indexed side.
                    let there = node_at(nc, nr);
                    b.add_road(here, there, length, spec.max_speed, heading, spec.lanes_per_road);
                } else {
                    let vid = *virtual_ids
                        .entry((nc, nr))
                        .or_insert_with(|| b.add_node(format!("v_{}_{}", nc, nr), true));
                    b.add_road(here, vid, length, spec.max_speed, heading, spec.lanes_per_road);
                    let back = match heading {
                        Heading::North => Heading::South,
                        Heading::South => Heading::North,
                        Heading::East => Heading::West,
                        Heading::West => Heading::East,
                    };
                    b.add_road(vid, here, length, spec.max_speed, back, spec.lanes_per_road);
                }
            }
        }
    }

    let roads_snapshot = b.roads.clone();
    for node in b.intersections.iter_mut().filter(|n| !n.is_virtual) {
        build_movements_and_phases(node, &roads_snapshot, &b.lanes)?;
    }

    let max_x = (cols - 1) as f64 * spec.ew_length;
    let max_y = (rows - 1) as f64 * spec.ns_length;
    let bbox = ((-spec.ew_length, -spec.ns_length), (max_x + spec.ew_length, max_y + spec.ns_length));
    let provenance = format!(
        "grid rows={} cols={} ew={}m ns={}m lanes={} vmax={}m/s",
        spec.rows, spec.cols, spec.ew_length, spec.ns_length, spec.lanes_per_road, spec.max_speed
    );
    let net = TrafficNetwork::assemble(b.intersections, b.roads, b.lanes, bbox, provenance);
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rows: u32, cols: u32) -> GridSpec {
        GridSpec { rows, cols, ew_length: 400.0, ns_length: 800.0, lanes_per_road: 3, max_speed: 11.11 }
    }

    #[test]
    fn jinan_sized_grid() {
        // 3x4 with 400 m east-west and 800 m north-south segments.
        let net = generate_grid(&spec(3, 4)).unwrap();
        assert_eq!(net.signalized_count(), 12);
        for (_, node) in net.signalized() {
            assert_eq!(node.movements.len(), 12);
            assert_eq!(node.phases.len(), 4);
        }
        let ew = net.roads.iter().find(|r| matches!(r.heading, Heading::East | Heading::West)).unwrap();
        let ns = net.roads.iter().find(|r| matches!(r.heading, Heading::North | Heading::South)).unwrap();
        assert_eq!(ew.length, 400.0);
        assert_eq!(ns.length, 800.0);
    }

    #[test]
    fn minimal_grid() {
        let net = generate_grid(&GridSpec {
            rows: 1,
            cols: 1,
            ew_length: 300.0,
            ns_length: 300.0,
            lanes_per_road: 3,
            max_speed: 11.11,
        })
        .unwrap();
        assert_eq!(net.signalized_count(), 1);
        let (_, node) = net.signalized().next().unwrap();
        assert_eq!(node.movements.len(), 12);
        assert_eq!(node.phases.len(), 4);
        assert_eq!(node.incoming_lanes.len(), 12);
        assert_eq!(node.outgoing_lanes.len(), 12);
    }

    #[test]
    fn two_by_two_movement_count() {
        // Each four-way intersection enumerates 4 approaches x 3 turn kinds.
        let net = generate_grid(&spec(2, 2)).unwrap();
        let total: usize = net.signalized().map(|(_, n)| n.movements.len()).sum();
        assert_eq!(total, 4 * 12);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(generate_grid(&spec(0, 3)).is_err());
    }

    #[test]
    fn phases_partition_signalized_movements() {
        let net = generate_grid(&spec(2, 3)).unwrap();
        for (_, node) in net.signalized() {
            let mut counts = vec![0usize; node.movements.len()];
            for phase in &node.phases {
                assert_eq!(phase.movements.len(), 2);
                for &mi in &phase.movements {
                    counts[mi] += 1;
                    assert_ne!(node.movements[mi].turn, TurnKind::Right);
                }
            }
            for (mi, mv) in node.movements.iter().enumerate() {
                let expected = if mv.turn == TurnKind::Right { 0 } else { 1 };
                assert_eq!(counts[mi], expected, "movement {} cover count", mi);
            }
        }
    }

    #[test]
    fn grid_roundtrips_through_canonical_json() {
        let net = generate_grid(&spec(1, 2)).unwrap();
        let text = net.to_canonical_json();
        let back = TrafficNetwork::from_canonical_json(&text).unwrap();
        assert_eq!(net, back);
    }
}
