use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    CostWeights, Infeasibility, PlanOutcome, PlannedPath, PlannerKind, COLLISION_SPACING,
    DEFAULT_INTEGRATION_STEP,
};
use crate::dubins::{normalize_angle, shortest_dubins, DubinsPath, Pose2};
use crate::error::{Error, Result};
use crate::field::{ObstacleGrid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrtOptions {
    pub iterations: usize,
    /// Set by the caller (in experiments, from the vessel model), never read from config files.
    #[serde(skip)]
    pub turn_radius: f64,
    #[serde(skip)]
    pub seed: u64,
    pub goal_bias: f64,
    pub goal_radius: f64,
    pub goal_heading_tolerance: f64,
    /// Upper bound on the near-set radius in the heading-weighted metric.
    pub max_near_radius: f64,
    /// Longest Dubins arc added by one extension.
    pub max_extension: f64,
    /// Spacing of the poses in the returned path.
    pub waypoint_spacing: f64,
}

impl Default for RrtOptions {
    fn default() -> Self {
        Self {
            iterations: 5000,
            turn_radius: 10.0,
            seed: 0,
            goal_bias: 0.05,
            goal_radius: 5.0,
            goal_heading_tolerance: 30f64.to_radians(),
            max_near_radius: 50.0,
            max_extension: 15.0,
            waypoint_spacing: 0.5,
        }
    }
}

/// Best goal-reaching cost after each iteration (infinite until the goal
/// region is first reached).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RrtTrace {
    pub best_cost: Vec<f64>,
    pub nodes: usize,
}

struct Node {
    pose: Pose2,
    parent: Option<usize>,
    cost: f64,
    edge: Option<DubinsPath>,
    edge_chi: f64,
    children: Vec<usize>,
}

struct Planner<'a> {
    field: &'a ScalarField,
    obstacles: &'a ObstacleGrid,
    alpha: f64,
    rho: f64,
}

impl Planner<'_> {
    fn metric(&self, a: &Pose2, b: &Pose2) -> f64 {
        let dpsi = normalize_angle(a.heading - b.heading);
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (self.rho * dpsi).powi(2)).sqrt()
    }

    /// Collision-checks the path at `COLLISION_SPACING` and integrates the
    /// field by midpoints. `None` when any sample is blocked or off the field.
    fn evaluate(&self, path: &DubinsPath) -> Option<f64> {
        if path.length == 0.0 {
            return self.obstacles.is_free(path.start.position()).then_some(0.0);
        }
        let n = (path.length / COLLISION_SPACING.min(DEFAULT_INTEGRATION_STEP)).ceil() as usize;
        let h = path.length / n as f64;
        let mut chi = 0.0;
        for k in 0..=n {
            if !self
                .obstacles
                .is_free(path.pose_at(k as f64 * h).position())
            {
                return None;
            }
            if k < n && self.alpha > 0.0 {
                let mid = path.pose_at((k as f64 + 0.5) * h).position();
                chi += self.field.sample_bilinear(mid).ok()? * h;
            }
        }
        Some(chi)
    }

    /// Adds `pose` with the cheapest collision-free parent among its near
    /// set (always including `nearest`), then rewires the near set through it.
    /// `None` when no parent connects or the pose duplicates a node.
    fn insert(
        &self,
        nodes: &mut Vec<Node>,
        pose: Pose2,
        nearest: usize,
        gamma: f64,
        max_radius: f64,
    ) -> Option<usize> {
        let n = nodes.len() as f64;
        let radius = (gamma * ((n + 1.0).ln() / (n + 1.0)).cbrt()).min(max_radius);
        let mut near: Vec<(usize, f64)> = (0..nodes.len())
            .filter_map(|i| {
                let d = self.metric(&nodes[i].pose, &pose);
                (d <= radius || i == nearest).then_some((i, d))
            })
            .collect();
        if near.iter().any(|&(_, d)| d < 1e-9) {
            return None;
        }

        // Test parents in order of their optimistic cost so most collision
        // checks are skipped.
        let mut candidates: Vec<(usize, DubinsPath, f64)> = near
            .iter()
            .map(|&(i, _)| {
                let path = shortest_dubins(nodes[i].pose, pose, self.rho);
                let bound = nodes[i].cost + path.length;
                (i, path, bound)
            })
            .collect();
        candidates.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        let mut best: Option<(usize, DubinsPath, f64, f64)> = None;
        for (i, path, bound) in candidates {
            if best.as_ref().is_some_and(|b| bound >= b.3) {
                break;
            }
            if let Some(chi) = self.evaluate(&path) {
                let cost = nodes[i].cost + path.length + self.alpha * chi;
                if best.as_ref().map_or(true, |b| cost < b.3) {
                    best = Some((i, path, chi, cost));
                }
            }
        }
        let (parent, path, chi, cost) = best?;

        let id = nodes.len();
        nodes.push(Node {
            pose,
            parent: Some(parent),
            cost,
            edge: Some(path),
            edge_chi: chi,
            children: Vec::new(),
        });
        nodes[parent].children.push(id);

        near.retain(|&(i, _)| i != parent);
        for (i, _) in near {
            let path = shortest_dubins(pose, nodes[i].pose, self.rho);
            if nodes[id].cost + path.length >= nodes[i].cost {
                continue;
            }
            let Some(chi) = self.evaluate(&path) else {
                continue;
            };
            let new_cost = nodes[id].cost + path.length + self.alpha * chi;
            if new_cost >= nodes[i].cost || is_ancestor(nodes, i, id) {
                continue;
            }
            let old_parent = nodes[i].parent.expect("only the root lacks a parent");
            nodes[old_parent].children.retain(|&c| c != i);
            nodes[id].children.push(i);
            let delta = new_cost - nodes[i].cost;
            nodes[i].parent = Some(id);
            nodes[i].edge = Some(path);
            nodes[i].edge_chi = chi;
            let mut stack = vec![i];
            while let Some(k) = stack.pop() {
                nodes[k].cost += delta;
                stack.extend(nodes[k].children.iter().copied());
            }
        }
        Some(id)
    }
}

pub fn rrt_star_plan(
    field: &ScalarField,
    obstacles: &ObstacleGrid,
    start: Pose2,
    goal: Pose2,
    weights: &CostWeights,
    options: &RrtOptions,
) -> Result<(PlanOutcome, RrtTrace)> {
    weights.validate()?;
    if !(options.turn_radius > 0.0 && options.turn_radius.is_finite()) {
        return Err(Error::param("turn radius must be positive"));
    }
    if !(options.max_extension > 0.0 && options.waypoint_spacing > 0.0) {
        return Err(Error::param(
            "extension length and waypoint spacing must be positive",
        ));
    }
    let planner = Planner {
        field,
        obstacles,
        alpha: weights.alpha,
        rho: options.turn_radius,
    };
    let mut trace = RrtTrace {
        best_cost: Vec::with_capacity(options.iterations),
        nodes: 1,
    };
    let infeasible = |reason: &str, nodes: usize, closest: f64| Infeasibility {
        planner: PlannerKind::RrtStar,
        reason: reason.to_string(),
        tree_nodes: nodes,
        iterations: options.iterations,
        closest_goal_distance: closest,
    };
    if !obstacles.is_free(start.position()) || !obstacles.is_free(goal.position()) {
        let r = infeasible(
            "start or goal is not in free space",
            0,
            start.distance(&goal),
        );
        return Ok((PlanOutcome::Infeasible(r), trace));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (w, h) = field.extent();
    let origin = field.origin();
    let free_volume = (obstacles.occupancy().iter().filter(|o| !**o).count() as f64)
        * field.cell_size().powi(2)
        * 2.0
        * PI
        * options.turn_radius;
    let gamma = 2.0 * (free_volume / (4.0 / 3.0 * PI)).cbrt();

    let in_goal = |p: &Pose2| {
        p.distance(&goal) <= options.goal_radius
            && normalize_angle(p.heading - goal.heading).abs() <= options.goal_heading_tolerance
    };

    let mut nodes = vec![Node {
        pose: start,
        parent: None,
        cost: 0.0,
        edge: None,
        edge_chi: 0.0,
        children: Vec::new(),
    }];
    let mut goal_nodes: Vec<usize> = if in_goal(&start) { vec![0] } else { Vec::new() };
    let mut closest = start.distance(&goal);
    let best_goal = |nodes: &[Node], goal_nodes: &[usize]| -> Option<usize> {
        goal_nodes
            .iter()
            .copied()
            .min_by(|&a, &b| nodes[a].cost.total_cmp(&nodes[b].cost).then(a.cmp(&b)))
    };

    for _ in 0..options.iterations {
        let target = if rng.gen_bool(options.goal_bias) {
            goal
        } else {
            let mut p = None;
            for _ in 0..100 {
                let x = origin.x + rng.gen_range(0.0..w);
                let y = origin.y + rng.gen_range(0.0..h);
                if obstacles.is_free(nalgebra::Point2::new(x, y)) {
                    p = Some((x, y));
                    break;
                }
            }
            let heading = rng.gen_range(-PI..PI);
            match p {
                Some((x, y)) => Pose2::new(x, y, heading),
                None => {
                    trace.best_cost.push(
                        best_goal(&nodes, &goal_nodes).map_or(f64::INFINITY, |g| nodes[g].cost),
                    );
                    continue;
                }
            }
        };

        let nearest = (0..nodes.len())
            .min_by(|&a, &b| {
                planner
                    .metric(&nodes[a].pose, &target)
                    .total_cmp(&planner.metric(&nodes[b].pose, &target))
            })
            .expect("tree has a root");
        let steer = shortest_dubins(nodes[nearest].pose, target, planner.rho);
        let new_pose = if steer.length > options.max_extension {
            steer.pose_at(options.max_extension)
        } else {
            target
        };

        if let Some(id) = planner.insert(
            &mut nodes,
            new_pose,
            nearest,
            gamma,
            options.max_near_radius,
        ) {
            closest = closest.min(new_pose.distance(&goal));
            if in_goal(&new_pose) {
                goal_nodes.push(id);
            }
            // Metric-nearest steering can keep truncating toward the same
            // wrong-heading pose, so offer the exact goal to each new node.
            let goal_in_tree = goal_nodes.iter().any(|&g| nodes[g].pose == goal);
            if !goal_in_tree
                && !in_goal(&new_pose)
                && shortest_dubins(new_pose, goal, planner.rho).length <= options.max_near_radius
            {
                if let Some(g) =
                    planner.insert(&mut nodes, goal, id, gamma, options.max_near_radius)
                {
                    closest = 0.0;
                    goal_nodes.push(g);
                }
            }
        }
        trace
            .best_cost
            .push(best_goal(&nodes, &goal_nodes).map_or(f64::INFINITY, |g| nodes[g].cost));
    }
    trace.nodes = nodes.len();

    let Some(end) = best_goal(&nodes, &goal_nodes) else {
        let r = infeasible("no branch reached the goal region", nodes.len(), closest);
        return Ok((PlanOutcome::Infeasible(r), trace));
    };

    let mut chain = vec![end];
    while let Some(p) = nodes[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();

    let mut waypoints = vec![start];
    let mut stations = vec![0.0];
    let mut length = 0.0;
    let mut chi = 0.0;
    for &k in &chain[1..] {
        let edge = nodes[k]
            .edge
            .as_ref()
            .expect("non-root nodes carry an edge");
        // Same uniform subdivision as the collision check, so every waypoint
        // is a checked sample.
        let n = (edge.length / options.waypoint_spacing).ceil().max(1.0) as usize;
        for j in 1..=n {
            let s = if j == n {
                edge.length
            } else {
                j as f64 * edge.length / n as f64
            };
            waypoints.push(if j == n {
                edge.end_pose()
            } else {
                edge.pose_at(s)
            });
            stations.push(length + s);
        }
        length += edge.length;
        chi += if planner.alpha > 0.0 {
            nodes[k].edge_chi
        } else {
            super::dubins_complexity(field, edge, DEFAULT_INTEGRATION_STEP)?
        };
    }
    let path = PlannedPath {
        planner: PlannerKind::RrtStar,
        alpha: weights.alpha,
        waypoints,
        stations,
        length,
        chi,
        cost: length + weights.alpha * chi,
        search_cost: nodes[end].cost,
    };
    Ok((PlanOutcome::Feasible(path), trace))
}

fn is_ancestor(nodes: &[Node], candidate: usize, mut of: usize) -> bool {
    while let Some(p) = nodes[of].parent {
        if p == candidate {
            return true;
        }
        of = p;
    }
    false
}
