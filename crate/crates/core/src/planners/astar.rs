use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point2;

use super::{
    cumulative_stations, polyline_complexity, polyline_length, CostWeights, Infeasibility,
    PlanOutcome, PlannedPath, PlannerKind, DEFAULT_INTEGRATION_STEP,
};
use crate::dubins::Pose2;
use crate::error::{Error, Result};
use crate::field::{ObstacleGrid, ScalarField};

const OFFSETS: [(i64, i64); 8] = [
    (1, 0),
    (0, 1),
    (-1, 0),
    (0, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
    (1, -1),
];

/// The 8-connected cell graph searched by A*.
///
/// Entering cell `v` costs `step * (1 + alpha * m(v))`, where `m(v)` is the
/// largest predicted complexity among cells whose centers lie within the
/// safety radius of `v`'s center. Diagonal moves may not cut past an
/// occupied orthogonal neighbor.
#[derive(Debug, Clone)]
pub struct GridGraph {
    width: usize,
    height: usize,
    origin: Point2<f64>,
    cell_size: f64,
    occupied: Vec<bool>,
    neighborhood: Vec<f64>,
    alpha: f64,
    straight: f64,
    diagonal: f64,
}

impl GridGraph {
    pub fn new(
        field: &ScalarField,
        obstacles: &ObstacleGrid,
        weights: &CostWeights,
    ) -> Result<Self> {
        weights.validate()?;
        if field.width() != obstacles.width()
            || field.height() != obstacles.height()
            || field.cell_size() != obstacles.cell_size()
            || field.origin() != obstacles.origin()
        {
            return Err(Error::param(
                "obstacle grid does not match the field geometry",
            ));
        }
        let (w, h) = (field.width(), field.height());
        let cs = field.cell_size();
        let reach = (weights.safety_radius / cs).floor() as i64;
        let r2 = weights.safety_radius * weights.safety_radius;
        let disk: Vec<(i64, i64)> = (-reach..=reach)
            .flat_map(|di| (-reach..=reach).map(move |dj| (di, dj)))
            .filter(|&(di, dj)| ((di * di + dj * dj) as f64) * cs * cs <= r2 + 1e-9)
            .collect();
        let mut neighborhood = vec![0.0; w * h];
        for j in 0..h {
            for i in 0..w {
                let mut m = f64::NEG_INFINITY;
                for &(di, dj) in &disk {
                    let (x, y) = (i as i64 + di, j as i64 + dj);
                    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        m = m.max(field.value(x as usize, y as usize));
                    }
                }
                neighborhood[j * w + i] = m;
            }
        }
        Ok(Self {
            width: w,
            height: h,
            origin: field.origin(),
            cell_size: cs,
            occupied: obstacles.occupancy().to_vec(),
            neighborhood,
            alpha: weights.alpha,
            straight: cs,
            diagonal: cs * std::f64::consts::SQRT_2,
        })
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    pub fn node_of(&self, p: Point2<f64>) -> Option<usize> {
        let u = (p.x - self.origin.x) / self.cell_size;
        let v = (p.y - self.origin.y) / self.cell_size;
        if !(u >= 0.0 && v >= 0.0 && u <= self.width as f64 && v <= self.height as f64) {
            return None;
        }
        let i = (u.floor() as usize).min(self.width - 1);
        let j = (v.floor() as usize).min(self.height - 1);
        Some(j * self.width + i)
    }

    pub fn center(&self, node: usize) -> Point2<f64> {
        let (i, j) = (node % self.width, node / self.width);
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn is_free(&self, node: usize) -> bool {
        !self.occupied[node]
    }

    pub fn neighborhood_complexity(&self, node: usize) -> f64 {
        self.neighborhood[node]
    }

    /// Cost of entering `target` by a move of the given kind.
    pub fn edge_cost(&self, target: usize, diagonal: bool) -> f64 {
        let step = if diagonal {
            self.diagonal
        } else {
            self.straight
        };
        step * (1.0 + self.alpha * self.neighborhood[target])
    }

    /// Admissible lower bound on the cost from `node` to `goal`.
    pub fn heuristic(&self, node: usize, goal: usize) -> f64 {
        (self.center(node) - self.center(goal)).norm() * (1.0 - 1e-12)
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (i, j) = ((node % self.width) as i64, (node / self.width) as i64);
        let (w, h) = (self.width as i64, self.height as i64);
        let free = move |x: i64, y: i64| -> bool {
            x >= 0 && y >= 0 && x < w && y < h && !self.occupied[(y * w + x) as usize]
        };
        OFFSETS.iter().filter_map(move |&(di, dj)| {
            let (x, y) = (i + di, j + dj);
            if !free(x, y) {
                return None;
            }
            let diagonal = di != 0 && dj != 0;
            if diagonal && !(free(i + di, j) && free(i, j + dj)) {
                return None;
            }
            let target = (y * w + x) as usize;
            Some((target, self.edge_cost(target, diagonal)))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // BinaryHeap is a max-heap: smallest f first, then largest g, then lowest index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lowest-cost cell sequence from `start` to `goal` (both cell indices) and its cost.
pub(crate) fn search(graph: &GridGraph, start: usize, goal: usize) -> Option<(Vec<usize>, f64)> {
    let n = graph.node_count();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    g[start] = 0.0;
    heap.push(Entry {
        f: graph.heuristic(start, goal),
        g: 0.0,
        node: start,
    });
    while let Some(Entry { g: gu, node: u, .. }) = heap.pop() {
        if gu > g[u] {
            continue;
        }
        if u == goal {
            let mut cells = vec![goal];
            let mut c = goal;
            while c != start {
                c = parent[c];
                cells.push(c);
            }
            cells.reverse();
            return Some((cells, gu));
        }
        for (v, cost) in graph.neighbors(u) {
            let gv = gu + cost;
            if gv < g[v] {
                g[v] = gv;
                parent[v] = u;
                heap.push(Entry {
                    f: gv + graph.heuristic(v, goal),
                    g: gv,
                    node: v,
                });
            }
        }
    }
    None
}

/// Drops interior cells where the move direction does not change.
fn merge_collinear(graph: &GridGraph, cells: &[usize]) -> Vec<Point2<f64>> {
    let pts: Vec<Point2<f64>> = cells.iter().map(|&c| graph.center(c)).collect();
    if pts.len() <= 2 {
        return pts;
    }
    let mut out = vec![pts[0]];
    for k in 1..pts.len() - 1 {
        let a = pts[k] - pts[k - 1];
        let b = pts[k + 1] - pts[k];
        if (a.x * b.y - a.y * b.x).abs() > 1e-9 || a.dot(&b) <= 0.0 {
            out.push(pts[k]);
        }
    }
    out.push(pts[pts.len() - 1]);
    out
}

/// Poses along a polyline, each heading along its outgoing segment (the last
/// keeps the incoming one).
pub(crate) fn polyline_poses(points: &[Point2<f64>]) -> Vec<Pose2> {
    let n = points.len();
    (0..n)
        .map(|k| {
            let (a, b) = if n < 2 {
                (points[0], points[0])
            } else if k + 1 < n {
                (points[k], points[k + 1])
            } else {
                (points[k - 1], points[k])
            };
            let heading = if a == b {
                0.0
            } else {
                (b.y - a.y).atan2(b.x - a.x)
            };
            Pose2::new(points[k].x, points[k].y, heading)
        })
        .collect()
}

pub fn astar_plan(
    field: &ScalarField,
    obstacles: &ObstacleGrid,
    start: Point2<f64>,
    goal: Point2<f64>,
    weights: &CostWeights,
) -> Result<PlanOutcome> {
    let graph = GridGraph::new(field, obstacles, weights)?;
    let infeasible = |reason: &str| {
        Ok(PlanOutcome::Infeasible(Infeasibility {
            planner: PlannerKind::AStar,
            reason: reason.to_string(),
            tree_nodes: 0,
            iterations: 0,
            closest_goal_distance: (goal - start).norm(),
        }))
    };
    let (Some(s), Some(t)) = (graph.node_of(start), graph.node_of(goal)) else {
        return infeasible("start or goal lies outside the field");
    };
    if !graph.is_free(s) || !graph.is_free(t) {
        return infeasible("start or goal cell is occupied");
    }
    let Some((cells, search_cost)) = search(&graph, s, t) else {
        return infeasible("goal is unreachable through free cells");
    };
    let points = merge_collinear(&graph, &cells);
    let length = polyline_length(&points);
    let chi = polyline_complexity(field, &points, DEFAULT_INTEGRATION_STEP)?;
    Ok(PlanOutcome::Feasible(PlannedPath {
        planner: PlannerKind::AStar,
        alpha: weights.alpha,
        stations: cumulative_stations(&points),
        waypoints: polyline_poses(&points),
        length,
        chi,
        cost: length + weights.alpha * chi,
        search_cost,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(w: usize, h: usize) -> ScalarField {
        ScalarField::constant(Point2::origin(), 1.0, w, h, 0.0).unwrap()
    }

    #[test]
    fn diagonal_on_empty_grid() {
        let f = zero(20, 20);
        let obs = ObstacleGrid::empty_like(&f);
        let out = astar_plan(
            &f,
            &obs,
            Point2::new(0.5, 0.5),
            Point2::new(10.5, 10.5),
            &CostWeights::default(),
        )
        .unwrap();
        let p = out.path().unwrap();
        assert!((p.search_cost - 10.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        assert_eq!(p.waypoints.len(), 2);
        assert!((p.cost - p.length).abs() < 1e-12);
    }

    #[test]
    fn enclosed_goal_is_infeasible() {
        let f = zero(15, 15);
        let mut obs = ObstacleGrid::empty_like(&f);
        for i in 5..=9 {
            for j in 5..=9 {
                if i == 5 || i == 9 || j == 5 || j == 9 {
                    obs.set_occupied(i, j, true);
                }
            }
        }
        let out = astar_plan(
            &f,
            &obs,
            Point2::new(1.5, 1.5),
            Point2::new(7.5, 7.5),
            &CostWeights::default(),
        )
        .unwrap();
        assert!(!out.is_feasible());
    }

    #[test]
    fn no_corner_cutting() {
        let f = zero(3, 3);
        let mut obs = ObstacleGrid::empty_like(&f);
        obs.set_occupied(1, 0, true);
        let g = GridGraph::new(&f, &obs, &CostWeights::default()).unwrap();
        let from = 0; // (0, 0)
        let targets: Vec<usize> = g.neighbors(from).map(|(t, _)| t).collect();
        assert!(!targets.contains(&4)); // (1, 1) would cut past (1, 0)
        assert!(targets.contains(&3)); // (0, 1)
    }

    #[test]
    fn neighborhood_uses_maximum_within_radius() {
        let mut values = vec![0.0; 20 * 20];
        values[10 * 20 + 10] = 0.8;
        let f = ScalarField::new(Point2::origin(), 1.0, 20, 20, values).unwrap();
        let obs = ObstacleGrid::empty_like(&f);
        let g = GridGraph::new(&f, &obs, &CostWeights::with_alpha(1.0)).unwrap();
        assert_eq!(g.neighborhood_complexity(10 * 20 + 15), 0.8);
        assert_eq!(g.neighborhood_complexity(10 * 20 + 16), 0.0);
        assert_eq!(g.neighborhood_complexity(14 * 20 + 13), 0.8);
    }
}
