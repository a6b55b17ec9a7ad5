//! Three-degree-of-freedom surface vessel tracking a planned path with
//! line-of-sight guidance and a feedback-linearizing heading controller.
//!
//! State is `eta = (x, y, psi)` in the world frame and `nu = (u, v, r)` in the
//! body frame, with `eta_dot = R(psi) nu` and `M nu_dot + C(nu) nu + D nu = B tau`.
//! The input `tau = (thrust, rudder)` drives surge and yaw; sway is unactuated.

use nalgebra::{Matrix3, Matrix3x2, Point2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dubins::normalize_angle;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::planners::PlannedPath;

pub const MAX_DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselState {
    pub eta: Vector3<f64>,
    pub nu: Vector3<f64>,
}

impl VesselState {
    pub fn new(x: f64, y: f64, psi: f64, u: f64, v: f64, r: f64) -> Self {
        Self {
            eta: Vector3::new(x, y, normalize_angle(psi)),
            nu: Vector3::new(u, v, r),
        }
    }

    pub fn position(&self) -> Point2<f64> {
        Point2::new(self.eta.x, self.eta.y)
    }

    pub fn heading(&self) -> f64 {
        self.eta.z
    }

    fn is_finite(&self) -> bool {
        self.eta.iter().chain(self.nu.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselParams {
    /// Inertia including added mass, row-major.
    pub mass: [[f64; 3]; 3],
    pub damping: [[f64; 3]; 3],
    /// Maps (thrust, rudder angle) to generalized forces, row-major.
    pub actuation: [[f64; 2]; 3],
    pub max_thrust: f64,
    pub max_rudder: f64,
    pub surge_speed: f64,
    /// Closed-loop heading natural frequency (rad/s); the loop is critically damped.
    pub heading_bandwidth: f64,
    /// Surge speed time constant (s).
    pub surge_time_constant: f64,
    /// Time constant of the filter that differentiates the desired heading (s).
    pub heading_rate_filter: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            mass: [[25.0, 0.0, 0.0], [0.0, 30.0, 0.0], [0.0, 0.0, 3.0]],
            damping: [[10.0, 0.0, 0.0], [0.0, 60.0, 0.0], [0.0, 0.0, 10.0]],
            actuation: [[1.0, 0.0], [0.0, 0.0], [0.0, 1.6]],
            max_thrust: 40.0,
            max_rudder: 0.6,
            surge_speed: 1.5,
            heading_bandwidth: 0.2,
            surge_time_constant: 10.0,
            heading_rate_filter: 1.0,
        }
    }
}

impl VesselParams {
    pub fn mass_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.mass[i][j])
    }

    pub fn damping_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.damping[i][j])
    }

    pub fn actuation_matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_fn(|i, j| self.actuation[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mass_matrix();
        if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max() {
            return Err(Error::param("inertia matrix must be symmetric"));
        }
        if m.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::param("inertia matrix must be positive definite"));
        }
        let d = self.damping_matrix();
        if ((d + d.transpose()) * 0.5).symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::param("damping matrix must be positive definite"));
        }
        let b = self.actuation_matrix();
        if b[(0, 0)] <= 0.0 || b[(2, 1)] == 0.0 {
            return Err(Error::param("actuation must drive surge and yaw"));
        }
        let positive = [
            self.max_thrust,
            self.max_rudder,
            self.surge_speed,
            self.heading_bandwidth,
            self.surge_time_constant,
            self.heading_rate_filter,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param(
                "vessel limits, speed and gains must be positive",
            ));
        }
        Ok(())
    }
}

pub fn rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Coriolis and centripetal matrix of a 3-DOF vessel with inertia `m`
/// (rigid body and added mass lumped together). Skew-symmetric for every `nu`.
pub fn coriolis(m: &Matrix3<f64>, nu: &Vector3<f64>) -> Matrix3<f64> {
    let a = m[(1, 1)] * nu.y + 0.5 * (m[(1, 2)] + m[(2, 1)]) * nu.z;
    let b = m[(0, 0)] * nu.x;
    Matrix3::new(0.0, 0.0, -a, 0.0, 0.0, b, a, -b, 0.0)
}

/// Precomputed matrices for the dynamics right-hand side.
#[derive(Debug, Clone)]
pub struct Dynamics {
    m: Matrix3<f64>,
    m_inv: Matrix3<f64>,
    d: Matrix3<f64>,
    b: Matrix3x2<f64>,
}

impl Dynamics {
    pub fn new(params: &VesselParams) -> Result<Self> {
        params.validate()?;
        let m = params.mass_matrix();
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::param("inertia matrix is singular"))?;
        Ok(Self {
            m,
            m_inv,
            d: params.damping_matrix(),
            b: params.actuation_matrix(),
        })
    }

    fn derivative(
        &self,
        eta: &Vector3<f64>,
        nu: &Vector3<f64>,
        tau: &Vector2<f64>,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let eta_dot = rotation(eta.z) * nu;
        let force = self.b * tau - coriolis(&self.m, nu) * nu - self.d * nu;
        (eta_dot, self.m_inv * force)
    }

    /// One RK4 step with `tau` held constant. `step` only labels a divergence error.
    pub fn step(
        &self,
        state: &VesselState,
        tau: Vector2<f64>,
        dt: f64,
        step: usize,
    ) -> Result<VesselState> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(Error::param(format!(
                "time step {dt} is outside (0, {MAX_DT}]"
            )));
        }
        let (e0, n0) = (state.eta, state.nu);
        let (k1e, k1n) = self.derivative(&e0, &n0, &tau);
        let (k2e, k2n) = self.derivative(&(e0 + k1e * (dt / 2.0)), &(n0 + k1n * (dt / 2.0)), &tau);
        let (k3e, k3n) = self.derivative(&(e0 + k2e * (dt / 2.0)), &(n0 + k2n * (dt / 2.0)), &tau);
        let (k4e, k4n) = self.derivative(&(e0 + k3e * dt), &(n0 + k3n * dt), &tau);
        let mut eta = e0 + (k1e + k2e * 2.0 + k3e * 2.0 + k4e) * (dt / 6.0);
        let nu = n0 + (k1n + k2n * 2.0 + k3n * 2.0 + k4n) * (dt / 6.0);
        eta.z = normalize_angle(eta.z);
        let next = VesselState { eta, nu };
        if !next.is_finite() {
            return Err(Error::NumericalDivergence { step });
        }
        Ok(next)
    }
}

pub fn step_dynamics(
    state: &VesselState,
    tau: Vector2<f64>,
    dt: f64,
    params: &VesselParams,
) -> Result<VesselState> {
    Dynamics::new(params)?.step(state, tau, dt, 0)
}

/// Surge thrust and rudder angle. The yaw channel cancels the Coriolis and
/// damping moments and imposes a critically damped second-order heading
/// error; surge is a first-order speed law with drag cancellation.
pub fn heading_controller(
    state: &VesselState,
    psi_d: f64,
    r_d: f64,
    u_d: f64,
    params: &VesselParams,
) -> Vector2<f64> {
    let m = params.mass_matrix();
    let d = params.damping_matrix();
    let b = params.actuation_matrix();
    let nu = state.nu;
    let n = coriolis(&m, &nu) * nu + d * nu;

    let wn = params.heading_bandwidth;
    let (kp, kd) = (wn * wn, 2.0 * wn);
    let err = normalize_angle(state.heading() - psi_d);
    let r_dot = -kp * err - kd * (nu.z - r_d);
    // Yaw row of M nu_dot; sway acceleration is left to the plant.
    let moment = m[(2, 2)] * r_dot + n.z;
    let rudder = (moment / b[(2, 1)]).clamp(-params.max_rudder, params.max_rudder);

    let u_dot = -(nu.x - u_d) / params.surge_time_constant;
    let thrust =
        ((m[(0, 0)] * u_dot + n.x) / b[(0, 0)]).clamp(-params.max_thrust, params.max_thrust);
    Vector2::new(thrust, rudder)
}

/// Radius of the steady turn at full rudder while holding the nominal surge
/// speed, found by simulating the turn to steady state.
pub fn achievable_turn_radius(params: &VesselParams) -> Result<f64> {
    let dynamics = Dynamics::new(params)?;
    let dt = 0.05;
    let mut s = VesselState::new(0.0, 0.0, 0.0, params.surge_speed, 0.0, 0.0);
    let mut last_r = f64::NAN;
    for step in 0..20_000 {
        let mut tau = heading_controller(&s, 0.0, 0.0, params.surge_speed, params);
        tau.y = params.max_rudder;
        s = dynamics.step(&s, tau, dt, step)?;
        if step % 200 == 199 {
            if (s.nu.z - last_r).abs() < 1e-12 {
                break;
            }
            last_r = s.nu.z;
        }
    }
    let speed = (s.nu.x.powi(2) + s.nu.y.powi(2)).sqrt();
    if s.nu.z.abs() < 1e-9 {
        return Err(Error::param("full rudder produces no steady yaw rate"));
    }
    Ok(speed / s.nu.z.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosOutput {
    pub psi_d: f64,
    pub cross_track: f64,
    /// Arc length along the reference of the projection onto the active segment.
    pub station: f64,
}

/// Line-of-sight guidance over a polyline reference.
#[derive(Debug, Clone)]
pub struct LosGuidance {
    points: Vec<Point2<f64>>,
    stations: Vec<f64>,
    segment: usize,
    pub lookahead: f64,
}

impl LosGuidance {
    /// Consecutive duplicate points are dropped; at least two distinct points
    /// must remain.
    pub fn new(points: &[Point2<f64>], lookahead: f64) -> Result<Self> {
        if !(lookahead > 0.0 && lookahead.is_finite()) {
            return Err(Error::param("look-ahead distance must be positive"));
        }
        let mut pts: Vec<Point2<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().map_or(true, |q| (p - q).norm() > 1e-9) {
                pts.push(*p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::param("reference path needs two distinct points"));
        }
        let mut stations = vec![0.0];
        for w in pts.windows(2) {
            stations.push(stations.last().unwrap() + (w[1] - w[0]).norm());
        }
        Ok(Self {
            points: pts,
            stations,
            segment: 0,
            lookahead,
        })
    }

    pub fn segment(&self) -> usize {
        self.segment
    }

    pub fn total_length(&self) -> f64 {
        *self.stations.last().unwrap()
    }

    pub fn end(&self) -> Point2<f64> {
        *self.points.last().unwrap()
    }

    fn project(&self, k: usize, p: Point2<f64>) -> (f64, f64, f64) {
        let (a, b) = (self.points[k], self.points[k + 1]);
        let d = b - a;
        let len = d.norm();
        let t = d / len;
        let rel = p - a;
        let along = t.dot(&rel);
        let cross = t.x * rel.y - t.y * rel.x;
        (along, cross, len)
    }

    /// Advances past every segment whose end the projection has passed, then
    /// returns the desired heading. Positive cross-track error is left of the path.
    pub fn update(&mut self, p: Point2<f64>) -> LosOutput {
        let last = self.points.len() - 2;
        while self.segment < last {
            let (along, _, len) = self.project(self.segment, p);
            if along < len {
                break;
            }
            self.segment += 1;
        }
        let k = self.segment;
        let (along, cross, _) = self.project(k, p);
        let d = self.points[k + 1] - self.points[k];
        let bearing = d.y.atan2(d.x);
        LosOutput {
            psi_d: normalize_angle(bearing + (-cross).atan2(self.lookahead)),
            cross_track: cross,
            station: self.stations[k] + along,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptions {
    pub dt: f64,
    pub lookahead: f64,
    pub goal_tolerance: f64,
    /// Timeout as a multiple of the nominal transit time (planned length / surge speed).
    pub timeout_factor: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dt: 0.1,
            lookahead: 20.0,
            goal_tolerance: 5.0,
            timeout_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: VesselState,
    pub cross_track: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExecutionMetrics {
    pub executed_length: f64,
    pub executed_chi: f64,
    pub executed_cost: f64,
    pub max_e: f64,
    pub rms_e: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub trajectory: Vec<TrajectorySample>,
    pub metrics: ExecutionMetrics,
}

impl Execution {
    pub fn positions(&self) -> Vec<Point2<f64>> {
        self.trajectory.iter().map(|s| s.state.position()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,psi,u,v,r,e\n");
        for s in &self.trajectory {
            let (eta, nu) = (s.state.eta, s.state.nu);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.t, eta.x, eta.y, eta.z, nu.x, nu.y, nu.z, s.cross_track
            ));
        }
        out
    }

    pub fn metrics_json(&self) -> serde_json::Value {
        serde_json::to_value(self.metrics).expect("metrics serialize")
    }
}

/// Midpoint line integral along a trajectory. The vessel may swing slightly
/// outside the field; such points take the value of the nearest edge.
fn trajectory_complexity(field: &ScalarField, points: &[Point2<f64>], step: f64) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let n = (len / step).ceil() as usize;
        let h = len / n as f64;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64;
            total += field.sample_bilinear_unchecked(a + (b - a) * t) * h;
        }
    }
    total
}

/// Simulates the vessel from the path's start pose at nominal surge speed
/// until it is within the goal tolerance of the path end (having tracked
/// into the final stretch) or the timeout expires.
pub fn simulate_tracking(
    path: &PlannedPath,
    params: &VesselParams,
    field: &ScalarField,
    options: &SimulationOptions,
) -> Result<Execution> {
    if !(options.dt > 0.0 && options.dt <= MAX_DT) {
        return Err(Error::param(format!(
            "time step {} is outside (0, {MAX_DT}]",
            options.dt
        )));
    }
    if !(options.goal_tolerance > 0.0 && options.timeout_factor > 0.0) {
        return Err(Error::param(
            "goal tolerance and timeout factor must be positive",
        ));
    }
    let dynamics = Dynamics::new(params)?;
    let mut guidance = LosGuidance::new(&path.positions(), options.lookahead)?;
    let start = path.waypoints[0];
    let mut state = VesselState::new(
        start.x,
        start.y,
        start.heading,
        params.surge_speed,
        0.0,
        0.0,
    );

    let total = guidance.total_length();
    let timeout = options.timeout_factor * total / params.surge_speed;
    let max_steps = (timeout / options.dt).ceil() as usize;
    let alpha_filter = options.dt / (params.heading_rate_filter + options.dt);

    let mut los = guidance.update(state.position());
    let mut prev_psi_d = los.psi_d;
    let mut r_d = 0.0;
    let mut trajectory = vec![TrajectorySample {
        t: 0.0,
        state,
        cross_track: los.cross_track,
    }];
    let mut completed = false;
    for step in 1..=max_steps {
        let tau = heading_controller(&state, los.psi_d, r_d, params.surge_speed, params);
        state = dynamics.step(&state, tau, options.dt, step)?;
        los = guidance.update(state.position());
        let raw_rate = normalize_angle(los.psi_d - prev_psi_d) / options.dt;
        r_d += alpha_filter * (raw_rate - r_d);
        prev_psi_d = los.psi_d;
        trajectory.push(TrajectorySample {
            t: step as f64 * options.dt,
            state,
            cross_track: los.cross_track,
        });
        // The run ends when the vessel crosses the normal through the final
        // waypoint; it counts as completed if it crosses close to the goal.
        if los.station >= total {
            completed = (state.position() - guidance.end()).norm() <= options.goal_tolerance;
            break;
        }
    }

    let points: Vec<Point2<f64>> = trajectory.iter().map(|s| s.state.position()).collect();
    let executed_length: f64 = points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let executed_chi =
        trajectory_complexity(field, &points, crate::planners::DEFAULT_INTEGRATION_STEP);
    let errors: Vec<f64> = trajectory.iter().map(|s| s.cross_track).collect();
    let max_e = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let rms_e = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    if !completed {
        let miss = (trajectory
            .last()
            .expect("trajectory is non-empty")
            .state
            .position()
            - guidance.end())
        .norm();
        log::warn!("vessel did not complete the path within {timeout:.0} s (ended {miss:.1} m from the goal)");
    }
    Ok(Execution {
        trajectory,
        metrics: ExecutionMetrics {
            executed_length,
            executed_chi,
            executed_cost: executed_length + path.alpha * executed_chi,
            max_e,
            rms_e,
            completed,
        },
    })
}
