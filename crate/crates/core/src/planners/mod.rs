//! Planning over the predicted complexity field.
//!
//! Both planners minimize `length + alpha * chi`, where `chi` is the line
//! integral of predicted complexity along the path, and both refuse cells
//! whose predicted value exceeds the obstacle threshold.

mod astar;
mod rrt_star;

pub use astar::{astar_plan, GridGraph};
pub use rrt_star::{rrt_star_plan, RrtOptions, RrtTrace};

use std::fmt;
use std::str::FromStr;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::dubins::{DubinsPath, Pose2};
use crate::error::{Error, Result};
use crate::field::{ObstacleGrid, ScalarField};
use crate::gp::GpModel;

pub const DEFAULT_INTEGRATION_STEP: f64 = 0.5;
pub const COLLISION_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub alpha: f64,
    pub obstacle_threshold: f64,
    /// Radius of the neighborhood whose maximum complexity A* charges per cell.
    pub safety_radius: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            obstacle_threshold: 0.9,
            safety_radius: 5.0,
        }
    }
}

impl CostWeights {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.obstacle_threshold) {
            return Err(Error::param("obstacle threshold must lie in [0, 1]"));
        }
        if !(self.safety_radius >= 0.0 && self.safety_radius.is_finite()) {
            return Err(Error::param("safety radius must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PlannerKind {
    AStar,
    RrtStar,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::AStar => "astar",
            PlannerKind::RrtStar => "rrt_star",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "astar" | "a*" => Ok(PlannerKind::AStar),
            "rrt_star" | "rrtstar" | "rrt*" => Ok(PlannerKind::RrtStar),
            other => Err(Error::param(format!("unknown planner '{other}'"))),
        }
    }
}

impl TryFrom<String> for PlannerKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PlannerKind> for String {
    fn from(k: PlannerKind) -> String {
        k.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub planner: PlannerKind,
    pub alpha: f64,
    pub waypoints: Vec<Pose2>,
    /// Arc length at each waypoint.
    pub stations: Vec<f64>,
    pub length: f64,
    pub chi: f64,
    pub cost: f64,
    /// The planner's own objective for the returned path (A*: grid edge costs
    /// with neighborhood maxima; RRT*: sum of Dubins edge costs).
    pub search_cost: f64,
}

impl PlannedPath {
    pub fn positions(&self) -> Vec<Point2<f64>> {
        self.waypoints.iter().map(Pose2::position).collect()
    }

    pub fn mean_complexity(&self) -> f64 {
        if self.length > 0.0 {
            self.chi / self.length
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,x,y,psi\n");
        for (st, p) in self.stations.iter().zip(&self.waypoints) {
            s.push_str(&format!("{st},{},{},{}\n", p.x, p.y, p.heading));
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "planner": self.planner.name(),
            "alpha": self.alpha,
            "length": self.length,
            "chi": self.chi,
            "cost": self.cost,
            "feasible": true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Infeasibility {
    pub planner: PlannerKind,
    pub reason: String,
    pub tree_nodes: usize,
    pub iterations: usize,
    /// Closest any explored state came to the goal position.
    pub closest_goal_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Feasible(PlannedPath),
    Infeasible(Infeasibility),
}

impl PlanOutcome {
    pub fn path(&self) -> Option<&PlannedPath> {
        match self {
            PlanOutcome::Feasible(p) => Some(p),
            PlanOutcome::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, PlanOutcome::Feasible(_))
    }
}

/// Posterior mean at every cell center of `template`, clamped to `[0, 1]`.
pub fn predict_field(model: &GpModel, template: &ScalarField) -> ScalarField {
    let centers: Vec<Point2<f64>> = template.cell_centers().collect();
    let values = model
        .predict_means(&centers)
        .into_iter()
        .map(|m| if m.is_nan() { 0.0 } else { m.clamp(0.0, 1.0) })
        .collect();
    template
        .with_values(values)
        .expect("clamped values keep the template geometry valid")
}

/// Midpoint-rule line integral of the field along a polyline.
pub fn polyline_complexity(field: &ScalarField, points: &[Point2<f64>], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::param("integration step must be positive"));
    }
    let mut total = 0.0;
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let n = (len / step).ceil() as usize;
        let h = len / n as f64;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            total += field.sample_bilinear(a + (b - a) * t)? * h;
        }
    }
    Ok(total)
}

/// Midpoint-rule line integral of the field along a Dubins path.
pub fn dubins_complexity(field: &ScalarField, path: &DubinsPath, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::param("integration step must be positive"));
    }
    if path.length == 0.0 {
        return Ok(0.0);
    }
    let n = (path.length / step).ceil() as usize;
    let h = path.length / n as f64;
    let mut total = 0.0;
    for k in 0..n {
        total += field.sample_bilinear(path.pose_at((k as f64 + 0.5) * h).position())? * h;
    }
    Ok(total)
}

/// First sampled point of the polyline (at most `spacing` apart, endpoints
/// included) that is outside the grid or in an occupied cell.
pub fn first_collision(
    obstacles: &ObstacleGrid,
    points: &[Point2<f64>],
    spacing: f64,
) -> Option<Point2<f64>> {
    if let [only] = points {
        return (!obstacles.is_free(*only)).then_some(*only);
    }
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let n = ((b - a).norm() / spacing).ceil().max(1.0) as usize;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n as f64);
            if !obstacles.is_free(p) {
                return Some(p);
            }
        }
    }
    None
}

fn polyline_length(points: &[Point2<f64>]) -> f64 {
    points.windows(2).map(|s| (s[1] - s[0]).norm()).sum()
}

fn cumulative_stations(points: &[Point2<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut s = 0.0;
    for (k, p) in points.iter().enumerate() {
        if k > 0 {
            s += (p - points[k - 1]).norm();
        }
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit_with_prior, PriorMean, TrainingSet};
    use crate::kernels::{Hyperparameters, KernelKind};

    fn ramp() -> ScalarField {
        ScalarField::from_fn(Point2::origin(), 1.0, 50, 20, |p| p.x / 50.0).unwrap()
    }

    #[test]
    fn constant_field_integrates_to_value_times_length() {
        let f = ScalarField::constant(Point2::origin(), 1.0, 30, 30, 0.4).unwrap();
        let pts = [Point2::new(1.0, 1.0), Point2::new(21.0, 16.0)];
        let chi = polyline_complexity(&f, &pts, 0.5).unwrap();
        assert!((chi - 0.4 * 25.0).abs() < 1e-6);
        let zero = ScalarField::constant(Point2::origin(), 1.0, 30, 30, 0.0).unwrap();
        assert_eq!(polyline_complexity(&zero, &pts, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn ramp_integral_matches_trapezoid() {
        let f = ramp();
        let (x0, x1) = (5.0, 40.0);
        let chi =
            polyline_complexity(&f, &[Point2::new(x0, 10.0), Point2::new(x1, 10.0)], 0.5).unwrap();
        let exact = (x1 - x0) * (x0 + x1) / 2.0 / 50.0;
        assert!((chi - exact).abs() < 1e-3 * exact);
    }

    #[test]
    fn leaving_the_field_is_an_error() {
        let f = ramp();
        let r = polyline_complexity(&f, &[Point2::new(5.0, 5.0), Point2::new(60.0, 5.0)], 0.5);
        assert!(matches!(r, Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn predicted_far_field_is_training_mean() {
        let t = TrainingSet::new(vec![Point2::new(0.5, 0.5)], vec![0.5]).unwrap();
        let m = fit_with_prior(
            t,
            KernelKind::SquaredExponential,
            Hyperparameters::new(1.0, 1.0, 0.0),
            PriorMean::TrainingMean,
        )
        .unwrap();
        let template = ScalarField::constant(Point2::origin(), 1.0, 80, 80, 0.0).unwrap();
        let p = predict_field(&m, &template);
        assert!((p.value(79, 79) - 0.5).abs() < 1e-12);
        assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn predicted_field_reproduces_dense_training() {
        let truth = ScalarField::from_fn(Point2::origin(), 1.0, 12, 10, |p| {
            0.3 + 0.2 * (p.x / 4.0).sin() * (p.y / 5.0).cos()
        })
        .unwrap();
        let t = TrainingSet::new(truth.cell_centers().collect(), truth.values().to_vec()).unwrap();
        let m =
            crate::gp::fit(t, KernelKind::Matern52, Hyperparameters::new(3.0, 1.0, 0.0)).unwrap();
        let p = predict_field(&m, &truth);
        for (a, b) in p.values().iter().zip(truth.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cost_weights_validation() {
        assert!(CostWeights::with_alpha(-1.0).validate().is_err());
        assert!(CostWeights {
            obstacle_threshold: 1.5,
            ..CostWeights::default()
        }
        .validate()
        .is_err());
    }
}
