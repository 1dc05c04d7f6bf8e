//! Seeded synthetic demand: Poisson arrivals on boundary entry roads with
//! routes drawn from shortest paths to boundary exits.

use super::{FlowEntry, FlowSpec, NetworkError, RoadId, TrafficNetwork, TurnKind};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Relative probability of each turn kind when choosing among candidate
/// routes. Straight-heavy by default, roughly matching arterial traffic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TurnWeights {
    pub left: f64,
    pub straight: f64,
    pub right: f64,
}

impl Default for TurnWeights {
    fn default() -> Self {
        TurnWeights { left: 0.25, straight: 0.5, right: 0.25 }
    }
}

impl TurnWeights {
    fn weight(&self, turn: TurnKind) -> f64 {
        match turn {
            TurnKind::Left => self.left,
            TurnKind::Straight => self.straight,
            TurnKind::Right => self.right,
        }
    }
}

/// Parameters for [`generate_poisson_flow`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoissonFlowConfig {
    /// Mean arrivals per second on each entry road.
    pub rate_per_entry: f64,
    /// Seconds of demand to generate; arrivals fall in [0, horizon).
    pub horizon: f64,
    pub seed: u64,
    pub turn_weights: TurnWeights,
    /// Per-heading multiplier on the entry rate, indexed by the entry road's
    /// travel heading [N, E, S, W]. Lets benchmarks skew the load.
    pub direction_weights: [f64; 4],
}

impl PoissonFlowConfig {
    pub fn new(rate_per_entry: f64, horizon: f64, seed: u64) -> Self {
        PoissonFlowConfig {
            rate_per_entry,
            horizon,
            seed,
            turn_weights: TurnWeights::default(),
            direction_weights: [1.0; 4],
        }
    }
}

/// Generates a reproducible arrival list. Each entry road gets its own RNG
/// stream derived from (seed, entry index), so adding or removing one entry
/// never perturbs the others.
pub fn generate_poisson_flow(
    net: &TrafficNetwork,
    cfg: &PoissonFlowConfig,
) -> Result<FlowSpec, NetworkError> {
    if cfg.rate_per_entry < 0.0 {
        return Err(NetworkError::InvalidArgument("arrival rate must be >= 0".into()));
    }
    if cfg.horizon <= 0.0 {
        return Err(NetworkError::InvalidArgument("horizon must be positive".into()));
    }

    let mut entries = Vec::new();
    let entry_roads = net.entry_roads();
    for (entry_idx, &road) in entry_roads.iter().enumerate() {
        let heading = net.road(road).heading;
        let rate = cfg.rate_per_entry * cfg.direction_weights[heading.index()];
        if rate <= 0.0 {
            continue;
        }
        let routes = candidate_routes(net, road, &cfg.turn_weights);
        if routes.is_empty() {
            continue;
        }
        let total_weight: f64 = routes.iter().map(|r| r.weight).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (entry_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut t = 0.0f64;
        loop {
            // Exponential inter-arrival via inverse CDF.
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            t += -u.ln() / rate;
            if t >= cfg.horizon {
                break;
            }
            let mut pick = rng.gen_range(0.0..total_weight);
            let mut chosen = &routes[0];
            for r in &routes {
                if pick < r.weight {
                    chosen = r;
                    break;
                }
                pick -= r.weight;
            }
            entries.push(FlowEntry {
                start_time: (t * 10.0).round() / 10.0,
                route: chosen.roads.clone(),
                interval: None,
                end_time: None,
                vehicle_length: None,
                min_gap: None,
            });
        }
    }
    entries.sort_by(|a, b| {
        a.start_time
            .partial_cmp(&b.start_time)
            .unwrap()
            .then_with(|| a.route.cmp(&b.route))
    });
    let flow = FlowSpec { entries };
    flow.validate(net)?;
    Ok(flow)
}

struct CandidateRoute {
    roads: Vec<RoadId>,
    weight: f64,
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    road: RoadId,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties broken by road id for determinism.
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then_with(|| other.road.cmp(&self.road))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path (by road length) from `entry` to every reachable exit road,
/// over the movement graph. Each path is weighted by the product of its turn
/// probabilities.
fn candidate_routes(net: &TrafficNetwork, entry: RoadId, weights: &TurnWeights) -> Vec<CandidateRoute> {
    let n = net.roads.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<RoadId>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[entry.0 as usize] = net.road(entry).length;
    heap.push(HeapItem { dist: dist[entry.0 as usize], road: entry });

    while let Some(HeapItem { dist: d, road }) = heap.pop() {
        if d > dist[road.0 as usize] {
            continue;
        }
        let end = net.road(road).to;
        let node = net.intersection(end);
        if node.is_virtual {
            continue; // exit road; path ends here
        }
        for mv in &node.movements {
            if mv.incoming != road {
                continue;
            }
            let next = mv.outgoing;
            let nd = d + net.road(next).length;
            let slot = next.0 as usize;
            if nd < dist[slot] - 1e-9 {
                dist[slot] = nd;
                prev[slot] = Some(road);
                heap.push(HeapItem { dist: nd, road: next });
            }
        }
    }

    let mut routes = Vec::new();
    for exit in net.exit_roads() {
        if exit == entry || !dist[exit.0 as usize].is_finite() {
            continue;
        }
        let mut roads = vec![exit];
        let mut cur = exit;
        while let Some(p) = prev[cur.0 as usize] {
            roads.push(p);
            cur = p;
        }
        if cur != entry {
            continue;
        }
        roads.reverse();
        let mut weight = 1.0;
        for pair in roads.windows(2) {
            let (ni, mi) = net.movement_between(pair[0], pair[1]).expect("path follows movements");
            weight *= weights.weight(net.intersections[ni].movements[mi].turn);
        }
        routes.push(CandidateRoute { roads, weight });
    }
    routes
}
