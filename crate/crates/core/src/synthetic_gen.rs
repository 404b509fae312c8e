//! Reproducible synthetic trip corpora on a grid road network.
//!
//! Points of interest are placed on grid nodes, a subset of the unordered POI
//! pairs is given a direction, and each pair gets up to three distinct routes:
//! the cheapest path under seeded segment travel costs plus detours through
//! random waypoints. Trips copy a uniformly chosen route and are corrupted at
//! the segment level by dropping interior segments and inserting spurious
//! segment ids that lie outside the network, mimicking map-matching errors.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{route_dissimilarity, Similarity};
use crate::error::{Error, Result};
use crate::trip_data::{History, SegmentId, Trip};

pub type NodeId = usize;

/// Cost of a segment with no jitter, in integer units.
const COST_UNIT: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadSegment {
    pub id: SegmentId,
    pub from: NodeId,
    pub to: NodeId,
}

/// Directed 4-neighbour grid. Node `(x, y)` has id `y * width + x`; the
/// segment from node `a` to node `b` is named `w<a>-<b>`.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    width: usize,
    height: usize,
    segments: Vec<RoadSegment>,
    out_edges: Vec<Vec<usize>>,
}

pub fn build_grid_network(width: usize, height: usize) -> Result<RoadNetwork> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least 2x2, got {width}x{height}"
        )));
    }
    let n_nodes = width * height;
    let mut segments = Vec::new();
    let mut out_edges = vec![Vec::new(); n_nodes];
    for y in 0..height {
        for x in 0..width {
            let from = y * width + x;
            let mut neighbours = Vec::with_capacity(4);
            if x + 1 < width {
                neighbours.push(from + 1);
            }
            if x > 0 {
                neighbours.push(from - 1);
            }
            if y + 1 < height {
                neighbours.push(from + width);
            }
            if y > 0 {
                neighbours.push(from - width);
            }
            for to in neighbours {
                out_edges[from].push(segments.len());
                segments.push(RoadSegment {
                    id: SegmentId::new(format!("w{from}-{to}"))?,
                    from,
                    to,
                });
            }
        }
    }
    Ok(RoadNetwork { width, height, segments, out_edges })
}

impl RoadNetwork {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn coords(&self, node: NodeId) -> (usize, usize) {
        (node % self.width, node / self.width)
    }

    pub fn manhattan(&self, a: NodeId, b: NodeId) -> usize {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    /// Breadth-first shortest path as segment indices; neighbours are expanded
    /// in a fixed order so the result is deterministic.
    pub fn shortest_path(&self, from: NodeId, to: NodeId) -> Vec<usize> {
        let mut via: Vec<Option<usize>> = vec![None; self.n_nodes()];
        let mut seen = vec![false; self.n_nodes()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(node) = queue.pop_front() {
            if node == to {
                break;
            }
            for &e in &self.out_edges[node] {
                let next = self.segments[e].to;
                if !seen[next] {
                    seen[next] = true;
                    via[next] = Some(e);
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = to;
        while let Some(e) = via[node] {
            path.push(e);
            node = self.segments[e].from;
        }
        path.reverse();
        path
    }

    /// Cheapest path under per-segment `costs` (indexed like
    /// [`segments`](Self::segments)), as segment indices. Ties are broken by
    /// node id so the result is deterministic.
    pub fn cheapest_path(&self, from: NodeId, to: NodeId, costs: &[u64]) -> Vec<usize> {
        let mut dist = vec![u64::MAX; self.n_nodes()];
        let mut via: Vec<Option<usize>> = vec![None; self.n_nodes()];
        let mut heap = BinaryHeap::from([Reverse((0u64, from))]);
        dist[from] = 0;
        while let Some(Reverse((d, node))) = heap.pop() {
            if node == to {
                break;
            }
            if d > dist[node] {
                continue;
            }
            for &e in &self.out_edges[node] {
                let next = self.segments[e].to;
                let nd = d + costs[e];
                if nd < dist[next] {
                    dist[next] = nd;
                    via[next] = Some(e);
                    heap.push(Reverse((nd, next)));
                }
            }
        }
        let mut path = Vec::new();
        let mut node = to;
        while let Some(e) = via[node] {
            path.push(e);
            node = self.segments[e].from;
        }
        path.reverse();
        path
    }

    /// True if consecutive segments share endpoints.
    pub fn is_connected_path(&self, path: &[usize]) -> bool {
        path.windows(2)
            .all(|w| self.segments[w[0]].to == self.segments[w[1]].from)
    }

    fn visits_no_node_twice(&self, path: &[usize]) -> bool {
        let mut seen = HashSet::with_capacity(path.len() + 1);
        path.first().is_none_or(|&e| seen.insert(self.segments[e].from))
            && path.iter().all(|&e| seen.insert(self.segments[e].to))
    }

    fn segment_ids(&self, path: &[usize]) -> Vec<SegmentId> {
        path.iter().map(|&e| self.segments[e].id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    pub n_pois: usize,
    /// Number of POI pairs that receive routes.
    pub n_od_pairs: usize,
    /// Each OD pair targets a route count drawn uniformly from
    /// `min_routes_per_od..=routes_per_od`.
    pub min_routes_per_od: usize,
    pub routes_per_od: usize,
    pub trips_total: usize,
    pub p_drop: f64,
    pub p_spurious: f64,
    /// Minimum Manhattan distance between POIs.
    pub min_poi_spacing: usize,
    /// Minimum Jaccard dissimilarity between any two generated routes.
    pub min_route_dissimilarity: f64,
    /// Segment travel costs are drawn uniformly from `[1, 1 + cost_jitter]`;
    /// routes follow the cheapest path. Zero gives hop-count shortest paths.
    pub cost_jitter: f64,
    /// Longest allowed detour relative to the shortest path.
    pub max_detour: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 30,
            height: 30,
            n_pois: 7,
            n_od_pairs: 17,
            min_routes_per_od: 1,
            routes_per_od: 3,
            trips_total: 781,
            p_drop: 0.02,
            p_spurious: 0.01,
            min_poi_spacing: 12,
            min_route_dissimilarity: 0.5,
            cost_jitter: 1.0,
            max_detour: 1.8,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_pois < 2 {
            return bad(format!("need at least 2 POIs, got {}", self.n_pois));
        }
        if !(1..=3).contains(&self.routes_per_od) {
            return bad(format!("routes_per_od must be 1..=3, got {}", self.routes_per_od));
        }
        if !(1..=self.routes_per_od).contains(&self.min_routes_per_od) {
            return bad(format!(
                "min_routes_per_od must be 1..={}, got {}",
                self.routes_per_od, self.min_routes_per_od
            ));
        }
        for (name, p) in [("p_drop", self.p_drop), ("p_spurious", self.p_spurious)] {
            if !(0.0..=0.5).contains(&p) {
                return bad(format!("{name} must lie in [0, 0.5], got {p}"));
            }
        }
        let pairs = self.n_pois * (self.n_pois - 1) / 2;
        if self.n_od_pairs == 0 || self.n_od_pairs > pairs {
            return bad(format!("n_od_pairs must be 1..={pairs}, got {}", self.n_od_pairs));
        }
        if self.trips_total == 0 {
            return bad("trips_total must be positive".into());
        }
        if self.min_poi_spacing < 2 {
            return bad("min_poi_spacing must be at least 2".into());
        }
        if !(self.cost_jitter.is_finite() && self.cost_jitter >= 0.0) {
            return bad(format!("cost_jitter must be >= 0, got {}", self.cost_jitter));
        }
        if self.max_detour.is_nan() || self.max_detour < 1.0 {
            return bad(format!("max_detour must be >= 1, got {}", self.max_detour));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub name: String,
    pub node: NodeId,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: String,
    pub destination: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub route_id: String,
    pub origin: String,
    pub destination: String,
    pub segments: Vec<SegmentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLabel {
    pub trip_id: String,
    pub route_id: String,
    pub origin: String,
    pub destination: String,
}

/// Ground truth written next to the generated trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pois: Vec<Poi>,
    pub od_pairs: Vec<OdPair>,
    pub routes: Vec<Route>,
    pub labels: Vec<TripLabel>,
}

fn place_pois(network: &RoadNetwork, config: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Poi>> {
    let mut nodes: Vec<NodeId> = Vec::with_capacity(config.n_pois);
    for _ in 0..10_000 {
        if nodes.len() == config.n_pois {
            break;
        }
        let cand = rng.gen_range(0..network.n_nodes());
        if nodes.iter().all(|&n| network.manhattan(n, cand) >= config.min_poi_spacing) {
            nodes.push(cand);
        }
    }
    if nodes.len() < config.n_pois {
        return Err(Error::InvalidParameter(format!(
            "could not place {} POIs {} apart on a {}x{} grid",
            config.n_pois, config.min_poi_spacing, network.width, network.height
        )));
    }
    Ok(nodes
        .into_iter()
        .enumerate()
        .map(|(i, node)| {
            let (x, y) = network.coords(node);
            Poi { name: format!("poi-{i}"), node, x, y }
        })
        .collect())
}

fn contains_run(haystack: &[SegmentId], needle: &[SegmentId]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Picks OD pairs and builds their routes. Returns the POIs, the chosen pairs
/// and every route; pairs or alternates that cannot be made sufficiently
/// distinct from existing routes are skipped with a warning.
pub fn generate_routes(network: &RoadNetwork, config: &GenConfig) -> Result<(Vec<Poi>, Vec<OdPair>, Vec<Route>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pois = place_pois(network, config, &mut rng)?;
    let spread = (config.cost_jitter * COST_UNIT as f64).round() as u64;
    let costs: Vec<u64> = (0..network.segments.len())
        .map(|_| COST_UNIT + rng.gen_range(0..=spread))
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..pois.len())
        .flat_map(|i| ((i + 1)..pois.len()).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);

    let as_trip = |segs: &[SegmentId]| Trip {
        trip_id: String::new(),
        timestamps: vec![0.0; segs.len()],
        segments: segs.to_vec(),
        origin_poi: None,
        destination_poi: None,
        cluster_id: None,
    };
    // A route running entirely along another one could never be told apart
    // from it online, so containment disqualifies a candidate as well.
    let distinct_from = |cand: &[SegmentId], routes: &[Route]| {
        let c = as_trip(cand);
        routes.iter().all(|r| {
            route_dissimilarity(&c, &as_trip(&r.segments), Similarity::Jaccard)
                >= config.min_route_dissimilarity
                && !contains_run(&r.segments, cand)
                && !contains_run(cand, &r.segments)
        })
    };

    let mut od_pairs = Vec::new();
    let mut routes: Vec<Route> = Vec::new();
    for (a, b) in pairs {
        if od_pairs.len() == config.n_od_pairs {
            break;
        }
        let (o, d) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let shortest = network.cheapest_path(pois[o].node, pois[d].node, &costs);
        let shortest_ids = network.segment_ids(&shortest);
        if !distinct_from(&shortest_ids, &routes) {
            continue;
        }
        let od_index = od_pairs.len();
        let origin = pois[o].name.clone();
        let destination = pois[d].name.clone();
        let make = |k: usize, segments: Vec<SegmentId>| Route {
            route_id: format!("od{od_index:02}-r{k}"),
            origin: origin.clone(),
            destination: destination.clone(),
            segments,
        };
        routes.push(make(0, shortest_ids));
        let limit = (shortest.len() as f64 * config.max_detour).floor() as usize;

        let target = rng.gen_range(config.min_routes_per_od..=config.routes_per_od);
        let mut made = 1;
        let mut attempts = 0;
        while made < target && attempts < 500 {
            attempts += 1;
            let waypoint = rng.gen_range(0..network.n_nodes());
            if waypoint == pois[o].node || waypoint == pois[d].node {
                continue;
            }
            let mut path = network.cheapest_path(pois[o].node, waypoint, &costs);
            path.extend(network.cheapest_path(waypoint, pois[d].node, &costs));
            if path.len() > limit || !network.visits_no_node_twice(&path) {
                continue;
            }
            let ids = network.segment_ids(&path);
            if distinct_from(&ids, &routes) {
                routes.push(make(made, ids));
                made += 1;
            }
        }
        if made < target {
            warn!("{origin}->{destination}: only {made} of {target} distinct routes generated");
        }
        od_pairs.push(OdPair { origin, destination });
    }
    if od_pairs.len() < config.n_od_pairs {
        warn!(
            "only {} of {} OD pairs have sufficiently distinct routes",
            od_pairs.len(),
            config.n_od_pairs
        );
    }
    Ok((pois, od_pairs, routes))
}

/// Copies `route` with segment dropout and spurious-segment insertion.
/// Timestamps advance 10 s per segment with up to 2 s of jitter.
fn corrupt_route(
    route: &Route,
    trip_index: usize,
    config: &GenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<SegmentId>)> {
    let last = route.segments.len() - 1;
    let mut segments = Vec::with_capacity(route.segments.len() + 2);
    for (k, seg) in route.segments.iter().enumerate() {
        let droppable = k != 0 && k != last;
        if droppable && rng.gen_bool(config.p_drop) {
            continue;
        }
        segments.push(seg.clone());
        if k != last && rng.gen_bool(config.p_spurious) {
            segments.push(SegmentId::new(format!("x{trip_index}-{k}"))?);
        }
    }
    let timestamps = (0..segments.len())
        .map(|i| {
            let jitter: f64 = rng.gen_range(-2.0..=2.0);
            ((10.0 * i as f64 + jitter).max(0.0) * 1000.0).round() / 1000.0
        })
        .collect();
    Ok((timestamps, segments))
}

/// Draws `config.trips_total` noisy trips from `routes`.
pub fn generate_trips(routes: &[Route], config: &GenConfig) -> Result<(History, Vec<TripLabel>)> {
    config.validate()?;
    if routes.is_empty() {
        return Err(Error::InvalidParameter("no routes to draw trips from".into()));
    }
    // separate stream from route generation
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6970_7321);
    let width = (config.trips_total - 1).to_string().len().max(4);
    let mut trips = Vec::with_capacity(config.trips_total);
    let mut labels = Vec::with_capacity(config.trips_total);
    for t in 0..config.trips_total {
        let route = &routes[rng.gen_range(0..routes.len())];
        let (timestamps, segments) = corrupt_route(route, t, config, &mut rng)?;
        let trip_id = format!("trip-{t:0width$}");
        let mut trip = Trip::new(trip_id.clone(), timestamps, segments)?;
        trip.origin_poi = Some(route.origin.clone());
        trip.destination_poi = Some(route.destination.clone());
        trip.cluster_id = Some(route.route_id.clone());
        trips.push(trip);
        labels.push(TripLabel {
            trip_id,
            route_id: route.route_id.clone(),
            origin: route.origin.clone(),
            destination: route.destination.clone(),
        });
    }
    Ok((History::new(trips)?, labels))
}

/// Full corpus: network, routes and trips with their ground truth.
pub fn generate_corpus(config: &GenConfig) -> Result<(History, GroundTruth)> {
    let network = build_grid_network(config.width, config.height)?;
    let (pois, od_pairs, routes) = generate_routes(&network, config)?;
    let (history, labels) = generate_trips(&routes, config)?;
    Ok((history, GroundTruth { pois, od_pairs, routes, labels }))
}
