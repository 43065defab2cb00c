//! Free-flow path planning: visibility graph over (inflated) obstacles plus A*.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::geometry::{point_strictly_inside_polygon, segment_segment_distance, segments_properly_intersect, Vec2};
use crate::scalar::{lit, Scalar};
use crate::scenario::Obstacle;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("{0} lies inside obstacle {1}")]
    InsideObstacle(&'static str, u32),
    #[error("unreachable")]
    Unreachable,
}

#[derive(Debug, Clone)]
pub struct VisibilityGraph<T> {
    pub nodes: Vec<Vec2<T>>,
    /// Undirected edges `(a, b, length)` with `a < b`.
    pub edges: Vec<(usize, usize, T)>,
    pub origin: usize,
    pub destination: usize,
    adjacency: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> VisibilityGraph<T> {
    pub fn neighbors(&self, node: usize) -> &[(usize, T)] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|&(n, _)| n == b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub waypoints: Vec<Vec2<T>>,
    pub length: T,
}

impl<T: Scalar> Path<T> {
    pub fn from_waypoints(waypoints: Vec<Vec2<T>>) -> Self {
        let length = waypoints.windows(2).map(|w| w[0].distance(w[1])).sum();
        Self { waypoints, length }
    }
}

fn distance_to_obstacle<T: Scalar>(p: Vec2<T>, o: &Obstacle<T>) -> T {
    if o.is_polygon() && point_strictly_inside_polygon(p, &o.vertices) {
        return T::zero();
    }
    o.edges()
        .map(|(a, b)| crate::geometry::point_segment_distance(p, a, b))
        .fold(T::infinity(), T::min)
}

fn blocked_by<T: Scalar>(a: Vec2<T>, b: Vec2<T>, o: &Obstacle<T>, clearance: T) -> bool {
    if o.edges().any(|(p, q)| segments_properly_intersect(a, b, p, q)) {
        return true;
    }
    if o.is_polygon() {
        for f in [0.25, 0.5, 0.75] {
            if point_strictly_inside_polygon(a.lerp(b, lit(f)), &o.vertices) {
                return true;
            }
        }
    }
    if clearance > T::zero() {
        // endpoints already closer than the clearance only need to stay where they are
        let eff = clearance.min(distance_to_obstacle(a, o)).min(distance_to_obstacle(b, o));
        let limit = eff * lit(1.0 - 1e-9);
        if o.edges().any(|(p, q)| segment_segment_distance(a, b, p, q) < limit) {
            return true;
        }
    }
    false
}

/// True when a disc of radius `clearance` can slide from `a` to `b` without touching an obstacle.
pub fn segment_clear<T: Scalar>(a: Vec2<T>, b: Vec2<T>, obstacles: &[Obstacle<T>], clearance: T) -> bool {
    !obstacles.iter().any(|o| blocked_by(a, b, o, clearance))
}

fn check_endpoint<T: Scalar>(p: Vec2<T>, which: &'static str, obstacles: &[Obstacle<T>]) -> Result<(), PlanError> {
    for o in obstacles {
        if o.is_polygon() && point_strictly_inside_polygon(p, &o.vertices) {
            return Err(PlanError::InsideObstacle(which, o.id));
        }
    }
    Ok(())
}

/// Candidate waypoints around every obstacle vertex, pushed out by the clearance.
fn corner_nodes<T: Scalar>(obstacles: &[Obstacle<T>], clearance: T) -> Vec<Vec2<T>> {
    let mut out: Vec<Vec2<T>> = Vec::new();
    let eps = lit::<T>(1e-9);
    let push = |p: Vec2<T>, out: &mut Vec<Vec2<T>>| {
        if !out.iter().any(|q| q.distance(p) <= eps) {
            out.push(p);
        }
    };
    for o in obstacles {
        for &v in &o.vertices {
            if clearance <= T::zero() {
                let inside = obstacles
                    .iter()
                    .any(|w| w.is_polygon() && point_strictly_inside_polygon(v, &w.vertices));
                if !inside {
                    push(v, &mut out);
                }
                continue;
            }
            // eight directions; chords between neighbours stay at least `clearance` from the vertex
            let r = clearance / lit::<T>(22.5f64.to_radians().cos()) * lit(1.0 + 1e-6);
            for k in 0..8 {
                let dir = Vec2::new(T::one(), T::zero()).rotated_deg(lit(45.0 * k as f64));
                let p = v + dir * r;
                let free = obstacles.iter().all(|w| distance_to_obstacle(p, w) >= clearance);
                if free {
                    push(p, &mut out);
                }
            }
        }
    }
    out
}

/// Builds the visibility graph between origin, destination and the obstacle corners.
///
/// Obstacles are inflated by `clearance` (the agent radius): an edge exists iff a disc
/// of that radius can traverse it.
pub fn build_visibility_graph<T: Scalar>(
    obstacles: &[Obstacle<T>],
    origin: Vec2<T>,
    destination: Vec2<T>,
    clearance: T,
) -> Result<VisibilityGraph<T>, PlanError> {
    check_endpoint(origin, "origin", obstacles)?;
    check_endpoint(destination, "destination", obstacles)?;
    let mut nodes = vec![origin, destination];
    nodes.extend(corner_nodes(obstacles, clearance));
    let n = nodes.len();
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    for a in 0..n {
        for b in (a + 1)..n {
            let len = nodes[a].distance(nodes[b]);
            if len <= T::zero() {
                continue;
            }
            if segment_clear(nodes[a], nodes[b], obstacles, clearance) {
                edges.push((a, b, len));
                adjacency[a].push((b, len));
                adjacency[b].push((a, len));
            }
        }
    }
    Ok(VisibilityGraph { nodes, edges, origin: 0, destination: 1, adjacency })
}

#[derive(PartialEq)]
struct Open<T> {
    f: T,
    node: usize,
}

impl<T: Scalar> Eq for Open<T> {}

impl<T: Scalar> Ord for Open<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .partial_cmp(&self.f)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<T: Scalar> PartialOrd for Open<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn node_sequence(parent: &[Option<usize>], mut v: usize) -> Vec<usize> {
    let mut seq = vec![v];
    while let Some(p) = parent[v] {
        seq.push(p);
        v = p;
    }
    seq.reverse();
    seq
}

/// Node-index sequence of a shortest origin→destination path (A*, straight-line heuristic).
pub fn shortest_node_path<T: Scalar>(graph: &VisibilityGraph<T>) -> Result<Vec<usize>, PlanError> {
    let n = graph.nodes.len();
    let goal = graph.nodes[graph.destination];
    let h = |v: usize| graph.nodes[v].distance(goal);
    let mut g = vec![T::infinity(); n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[graph.origin] = T::zero();
    open.push(Open { f: h(graph.origin), node: graph.origin });
    let tie = lit::<T>(1e-12);
    while let Some(Open { node: u, .. }) = open.pop() {
        if closed[u] {
            continue;
        }
        closed[u] = true;
        if u == graph.destination {
            return Ok(node_sequence(&parent, u));
        }
        for &(v, w) in graph.neighbors(u) {
            let cand = g[u] + w;
            if !g[v].is_finite() || cand < g[v] - tie * T::one().max(g[v].abs()) {
                g[v] = cand;
                parent[v] = Some(u);
                open.push(Open { f: cand + h(v), node: v });
            } else if !closed[v] && (cand - g[v]).abs() <= tie * T::one().max(g[v].abs()) {
                let mut via_u = node_sequence(&parent, u);
                via_u.push(v);
                if via_u < node_sequence(&parent, v) {
                    parent[v] = Some(u);
                }
            }
        }
    }
    Err(PlanError::Unreachable)
}

/// Minimum-length path through the graph.
pub fn plan_path<T: Scalar>(graph: &VisibilityGraph<T>) -> Result<Path<T>, PlanError> {
    let seq = shortest_node_path(graph)?;
    Ok(Path::from_waypoints(seq.into_iter().map(|i| graph.nodes[i]).collect()))
}

/// Convenience wrapper: build the graph and plan in one call.
pub fn plan<T: Scalar>(
    obstacles: &[Obstacle<T>],
    origin: Vec2<T>,
    destination: Vec2<T>,
    clearance: T,
) -> Result<Path<T>, PlanError> {
    if origin == destination {
        return Ok(Path::from_waypoints(vec![origin, destination]));
    }
    let graph = build_visibility_graph(obstacles, origin, destination, clearance)?;
    plan_path(&graph)
}

/// Drops intermediate waypoints whenever the shortcut stays obstacle-free.
pub fn smooth_path<T: Scalar>(path: &Path<T>, obstacles: &[Obstacle<T>], clearance: T) -> Path<T> {
    let w = &path.waypoints;
    if w.len() <= 2 {
        return path.clone();
    }
    let mut out = vec![w[0]];
    let mut i = 0;
    while i < w.len() - 1 {
        let mut j = w.len() - 1;
        while j > i + 1 && !segment_clear(w[i], w[j], obstacles, clearance) {
            j -= 1;
        }
        out.push(w[j]);
        i = j;
    }
    Path::from_waypoints(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type V = Vec2<f64>;

    /// Independent oracle: O(n²) Dijkstra over the same graph.
    fn dijkstra(graph: &VisibilityGraph<f64>) -> Option<f64> {
        let n = graph.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[graph.origin] = 0.0;
        for _ in 0..n {
            let u = (0..n).filter(|&v| !done[v]).min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
            if dist[u].is_infinite() {
                return None;
            }
            done[u] = true;
            for &(v, w) in graph.neighbors(u) {
                dist[v] = dist[v].min(dist[u] + w);
            }
        }
        dist[graph.destination].is_finite().then_some(dist[graph.destination])
    }

    fn square(id: u32, cx: f64, cy: f64, half: f64) -> Obstacle<f64> {
        Obstacle::rect(id, V::new(cx - half, cy - half), V::new(cx + half, cy + half))
    }

    #[test]
    fn empty_environment() {
        let g = build_visibility_graph(&[], V::new(0.0, 0.0), V::new(10.0, 0.0), 0.0).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 1);
        let p = plan_path(&g).unwrap();
        assert_eq!(p.waypoints, vec![V::new(0.0, 0.0), V::new(10.0, 0.0)]);
        assert_relative_eq!(p.length, 10.0);
    }

    #[test]
    fn square_blocks_direct_edge() {
        let obs = [square(0, 5.0, 0.0, 1.0)];
        let g = build_visibility_graph(&obs, V::new(0.0, 0.0), V::new(10.0, 0.0), 0.0).unwrap();
        assert!(!g.has_edge(0, 1));
        for c in [V::new(4.0, -1.0), V::new(6.0, -1.0), V::new(6.0, 1.0), V::new(4.0, 1.0)] {
            assert!(g.nodes.contains(&c));
        }
        let p = plan_path(&g).unwrap();
        assert_relative_eq!(p.length, dijkstra(&g).unwrap(), epsilon = 1e-12);
        // via two corners: 2·sqrt(17) + 2
        assert_relative_eq!(p.length, 2.0 * 17f64.sqrt() + 2.0, epsilon = 1e-12);
        assert_eq!(p.waypoints.len(), 4);
    }

    #[test]
    fn unit_square_on_segment_routes_around_corner() {
        let obs = [square(0, 5.0, 0.0, 0.5)];
        let g = build_visibility_graph(&obs, V::new(0.0, 0.0), V::new(10.0, 0.0), 0.3).unwrap();
        let p = plan_path(&g).unwrap();
        assert_relative_eq!(p.length, dijkstra(&g).unwrap(), epsilon = 1e-12);
        assert!(p.length > 10.0);
        for w in p.waypoints.windows(2) {
            assert!(segment_clear(w[0], w[1], &obs, 0.3));
        }
    }

    #[test]
    fn destination_inside_obstacle() {
        let obs = [square(9, 10.0, 0.0, 1.0)];
        let err = build_visibility_graph(&obs, V::new(0.0, 0.0), V::new(10.0, 0.0), 0.0).unwrap_err();
        assert_eq!(err, PlanError::InsideObstacle("destination", 9));
    }

    #[test]
    fn enclosed_destination_unreachable() {
        let ring = Obstacle::polyline(
            0,
            vec![V::new(8.0, -2.0), V::new(12.0, -2.0), V::new(12.0, 2.0), V::new(8.0, 2.0), V::new(8.0, -2.0)],
        );
        let err = plan(&[ring], V::new(0.0, 0.0), V::new(10.0, 0.0), 0.3).unwrap_err();
        assert_eq!(err, PlanError::Unreachable);
    }

    #[test]
    fn smoothing_keeps_clear_shortcuts() {
        let path = Path::from_waypoints(vec![V::new(0.0, 0.0), V::new(5.0, 0.1), V::new(10.0, 0.0)]);
        let s = smooth_path(&path, &[], 1.0);
        assert_eq!(s.waypoints, vec![V::new(0.0, 0.0), V::new(10.0, 0.0)]);
        let obs = [square(0, 5.0, 0.0, 1.0)];
        let p = plan(&obs, V::new(0.0, 0.0), V::new(10.0, 0.0), 1.0).unwrap();
        let s = smooth_path(&p, &obs, 1.0);
        assert!(s.length <= p.length + 1e-12);
        for w in s.waypoints.windows(2) {
            assert!(segment_clear(w[0], w[1], &obs, 1.0));
        }
    }

    fn boxes() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        proptest::collection::vec((1.0..19.0f64, -6.0..6.0f64, 0.3..1.5f64), 0..5)
    }

    fn to_obstacles(b: &[(f64, f64, f64)]) -> Vec<Obstacle<f64>> {
        // keep only non-overlapping boxes that do not cover the endpoints
        let mut out: Vec<Obstacle<f64>> = Vec::new();
        let mut kept: Vec<(f64, f64, f64)> = Vec::new();
        for &(x, y, h) in b {
            let clash = kept.iter().any(|&(x2, y2, h2)| (x - x2).abs() < h + h2 + 0.1 && (y - y2).abs() < h + h2 + 0.1);
            let covers = |px: f64, py: f64| (px - x).abs() <= h + 0.05 && (py - y).abs() <= h + 0.05;
            if !clash && !covers(0.0, 0.0) && !covers(20.0, 0.0) {
                kept.push((x, y, h));
                out.push(square(out.len() as u32, x, y, h));
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn astar_matches_dijkstra(b in boxes(), clearance in prop_oneof![Just(0.0), 0.1..0.5f64]) {
            let obs = to_obstacles(&b);
            let (o, d) = (V::new(0.0, 0.0), V::new(20.0, 0.0));
            if let Ok(g) = build_visibility_graph(&obs, o, d, clearance) {
                match (plan_path(&g), dijkstra(&g)) {
                    (Ok(p), Some(len)) => {
                        prop_assert!((p.length - len).abs() <= 1e-9 * len.max(1.0));
                        prop_assert!(p.length >= o.distance(d) - 1e-9);
                    }
                    (Err(PlanError::Unreachable), None) => {}
                    (a, b) => prop_assert!(false, "mismatch {:?} vs {:?}", a, b),
                }
            }
        }

        #[test]
        fn adding_obstacle_never_shortens(b in boxes(), extra in (2.0..18.0f64, -4.0..4.0f64, 0.3..1.5f64)) {
            let obs = to_obstacles(&b);
            let (o, d) = (V::new(0.0, 0.0), V::new(20.0, 0.0));
            let mut more = b.clone();
            more.push(extra);
            let obs2 = to_obstacles(&more);
            if let (Ok(p1), Ok(p2)) = (plan(&obs, o, d, 0.0), plan(&obs2, o, d, 0.0)) {
                prop_assert!(p2.length >= p1.length - 1e-9);
            }
        }
    }
}
