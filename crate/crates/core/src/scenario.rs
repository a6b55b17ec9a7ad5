//! Synthetic survey scenarios.
//!
//! A field is a base level plus Gaussian lobes, half-plane steps, optional
//! high-complexity blobs and an optional barrier band with a gap, clipped to
//! `[0, 1]`. Start and goal sit in opposite corners on the calmest nearby cell.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dubins::Pose2;
use crate::error::{Error, Result};
use crate::field::ScalarField;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub field: ScalarField,
    pub start: Pose2,
    pub goal: Pose2,
}

impl Scenario {
    pub fn new(
        name: impl Into<String>,
        field: ScalarField,
        start: Pose2,
        goal: Pose2,
    ) -> Result<Self> {
        for (label, p) in [("start", &start), ("goal", &goal)] {
            if !field.contains(p.position()) {
                return Err(Error::param(format!(
                    "{label} ({}, {}) lies outside the field",
                    p.x, p.y
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            field,
            start,
            goal,
        })
    }
}

/// A half-plane offset: cells on the side `normal` points to gain `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Point on the boundary, meters relative to the field origin.
    pub through: [f64; 2],
    pub normal_angle: f64,
    pub delta: f64,
}

/// A high band across the field with one opening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    /// Direction of the band's centerline; the line passes through the field center.
    pub angle: f64,
    pub thickness: f64,
    /// Signed position of the gap along the centerline, from the field center.
    pub gap_offset: f64,
    pub gap_width: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub base_level: f64,
    pub lobes: usize,
    pub lobe_amplitude: [f64; 2],
    pub lobe_sigma: [f64; 2],
    /// Randomly placed steps; magnitudes are drawn from `step_delta` with random sign.
    pub steps: usize,
    pub step_delta: [f64; 2],
    pub oblique_steps: bool,
    pub fixed_steps: Vec<Step>,
    pub obstacles: usize,
    pub obstacle_sigma: [f64; 2],
    pub barrier: Option<Barrier>,
    /// Distance of the nominal start and goal from their corners.
    pub endpoint_margin: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            width: DEFAULT_EXTENT_CELLS,
            height: DEFAULT_EXTENT_CELLS,
            cell_size: 1.0,
            base_level: 0.2,
            lobes: 4,
            lobe_amplitude: [0.15, 0.45],
            lobe_sigma: [8.0, 25.0],
            steps: 1,
            step_delta: [0.15, 0.35],
            oblique_steps: false,
            fixed_steps: Vec::new(),
            obstacles: 0,
            obstacle_sigma: [6.0, 12.0],
            barrier: None,
            endpoint_margin: 20.0,
        }
    }
}

pub const DEFAULT_EXTENT_CELLS: usize = 200;

/// Blobs keep this far from the nominal start and goal.
const OBSTACLE_CLEARANCE: f64 = 30.0;
const OBSTACLE_PEAK: f64 = 1.0;
const FREE_LIMIT: f64 = 0.9;

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.gen_range(range[0]..range[1])
    } else {
        range[0]
    }
}

impl ScenarioSpec {
    fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::param(format!(
                "scenario field must be at least 2x2 cells, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::param("scenario cell size must be positive"));
        }
        let (w, h) = (
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        );
        if !(self.endpoint_margin >= 0.0 && 2.0 * self.endpoint_margin < w.min(h)) {
            return Err(Error::param(
                "endpoint margin does not fit inside the field",
            ));
        }
        let ranges = [
            self.lobe_amplitude,
            self.lobe_sigma,
            self.step_delta,
            self.obstacle_sigma,
        ];
        if ranges
            .iter()
            .any(|r| !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]))
        {
            return Err(Error::param(
                "scenario ranges must be finite with min <= max",
            ));
        }
        if self.lobe_sigma[0] <= 0.0 || self.obstacle_sigma[0] <= 0.0 {
            return Err(Error::param("lobe and obstacle widths must be positive"));
        }
        Ok(())
    }
}

pub fn generate_scenario(name: &str, seed: u64, spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Point2::origin();
    let w = spec.width as f64 * spec.cell_size;
    let h = spec.height as f64 * spec.cell_size;
    let nominal_start = Point2::new(spec.endpoint_margin, spec.endpoint_margin);
    let nominal_goal = Point2::new(w - spec.endpoint_margin, h - spec.endpoint_margin);

    let lobes: Vec<(Point2<f64>, f64, f64)> = (0..spec.lobes)
        .map(|_| {
            let c = Point2::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            (
                c,
                uniform(&mut rng, spec.lobe_amplitude),
                uniform(&mut rng, spec.lobe_sigma),
            )
        })
        .collect();

    let mut steps = spec.fixed_steps.clone();
    for _ in 0..spec.steps {
        let through = [
            rng.gen_range(0.2 * w..0.8 * w),
            rng.gen_range(0.2 * h..0.8 * h),
        ];
        let normal_angle = if spec.oblique_steps {
            rng.gen_range(0.0..2.0 * PI)
        } else {
            rng.gen_range(0..4) as f64 * FRAC_PI_2
        };
        let magnitude = uniform(&mut rng, spec.step_delta);
        let delta = if rng.gen_bool(0.5) {
            magnitude
        } else {
            -magnitude
        };
        steps.push(Step {
            through,
            normal_angle,
            delta,
        });
    }

    let mut blobs = Vec::with_capacity(spec.obstacles);
    while blobs.len() < spec.obstacles {
        let c = Point2::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let sigma = uniform(&mut rng, spec.obstacle_sigma);
        let reach = OBSTACLE_CLEARANCE + 2.0 * sigma;
        if (c - nominal_start).norm() > reach && (c - nominal_goal).norm() > reach {
            blobs.push((c, sigma));
        }
    }

    let center = Point2::new(w / 2.0, h / 2.0);
    let value = |p: Point2<f64>| -> f64 {
        let mut v = spec.base_level;
        for (c, a, s) in &lobes {
            v += a * (-(p - c).norm_squared() / (2.0 * s * s)).exp();
        }
        for st in &steps {
            let n = Vector2::new(st.normal_angle.cos(), st.normal_angle.sin());
            if (p - Point2::new(st.through[0], st.through[1])).dot(&n) > 0.0 {
                v += st.delta;
            }
        }
        for (c, s) in &blobs {
            v += OBSTACLE_PEAK * (-(p - c).norm_squared() / (2.0 * s * s)).exp();
        }
        if let Some(b) = &spec.barrier {
            let dir = Vector2::new(b.angle.cos(), b.angle.sin());
            let rel = p - center;
            let along = rel.dot(&dir);
            let across = rel.x * dir.y - rel.y * dir.x;
            if across.abs() <= b.thickness / 2.0 && (along - b.gap_offset).abs() > b.gap_width / 2.0
            {
                v = v.max(b.level);
            }
        }
        v
    };
    let field = ScalarField::from_fn(origin, spec.cell_size, spec.width, spec.height, value)?;

    let start = calmest_near(&field, nominal_start, spec.endpoint_margin / 2.0)?;
    let goal = calmest_near(&field, nominal_goal, spec.endpoint_margin / 2.0)?;
    let heading = (goal.y - start.y).atan2(goal.x - start.x);
    Scenario::new(
        name,
        field,
        Pose2::new(start.x, start.y, heading),
        Pose2::new(goal.x, goal.y, heading),
    )
}

/// Center of the lowest-valued cell within `radius` (Chebyshev) of `p`;
/// ties go to the cell nearest `p`. The radius doubles while every cell in
/// range is above the free limit.
fn calmest_near(field: &ScalarField, p: Point2<f64>, radius: f64) -> Result<Point2<f64>> {
    let (w, h) = field.extent();
    let mut r = radius.max(field.cell_size());
    loop {
        match calmest_within(field, p, r) {
            Some(c) => return Ok(c),
            None if r < w.max(h) => r *= 2.0,
            None => {
                return Err(Error::param(format!(
                    "no free cell near ({:.1}, {:.1}) for an endpoint",
                    p.x, p.y
                )))
            }
        }
    }
}

fn calmest_within(field: &ScalarField, p: Point2<f64>, radius: f64) -> Option<Point2<f64>> {
    let mut best: Option<(f64, f64, Point2<f64>)> = None;
    for j in 0..field.height() {
        for i in 0..field.width() {
            let c = field.cell_center(i, j);
            if (c.x - p.x).abs() > radius || (c.y - p.y).abs() > radius {
                continue;
            }
            let key = (field.value(i, j), (c - p).norm());
            if best.map_or(true, |(v, d, _)| key < (v, d)) {
                best = Some((key.0, key.1, c));
            }
        }
    }
    match best {
        Some((v, _, c)) if v <= FREE_LIMIT => Some(c),
        _ => None,
    }
}

/// The six default scenarios, named `a` to `f`.
pub fn default_specs() -> Vec<(String, ScenarioSpec)> {
    let base = ScenarioSpec::default();
    let specs = vec![
        ScenarioSpec {
            lobes: 4,
            steps: 1,
            obstacles: 3,
            ..base.clone()
        },
        ScenarioSpec {
            lobes: 8,
            steps: 2,
            oblique_steps: true,
            ..base.clone()
        },
        ScenarioSpec {
            lobes: 5,
            steps: 1,
            barrier: Some(Barrier {
                angle: -std::f64::consts::FRAC_PI_4,
                thickness: 8.0,
                gap_offset: 0.25 * base.width as f64 * base.cell_size,
                gap_width: 30.0,
                level: 1.0,
            }),
            ..base.clone()
        },
        ScenarioSpec {
            lobes: 2,
            steps: 0,
            lobe_sigma: [20.0, 40.0],
            ..base.clone()
        },
        ScenarioSpec {
            lobes: 12,
            steps: 3,
            oblique_steps: true,
            lobe_sigma: [6.0, 18.0],
            ..base.clone()
        },
        ScenarioSpec {
            lobes: 6,
            steps: 2,
            obstacles: 5,
            ..base
        },
    ];
    ["a", "b", "c", "d", "e", "f"]
        .iter()
        .map(|n| n.to_string())
        .zip(specs)
        .collect()
}

/// Seed used for the `index`-th scenario of a suite generated from `seed`.
pub fn suite_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

pub fn default_suite(seed: u64) -> Result<Vec<Scenario>> {
    default_specs()
        .iter()
        .enumerate()
        .map(|(i, (name, spec))| generate_scenario(name, suite_seed(seed, i), spec))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    field: PathBuf,
    start: [f64; 3],
    goal: [f64; 3],
}

/// Writes `<dir>/<name>.field` and `<dir>/<name>.toml`, each starting with
/// `header` (comment lines, may be empty); returns the scenario file path.
pub fn save_scenario(scenario: &Scenario, dir: impl AsRef<Path>, header: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let field_name = format!("{}.field", scenario.name);
    let field_path = dir.join(&field_name);
    fs::write(&field_path, format!("{header}{}", scenario.field.to_text()))
        .map_err(|e| Error::io(format!("writing {}", field_path.display()), e))?;
    let doc = ScenarioFile {
        name: scenario.name.clone(),
        field: PathBuf::from(field_name),
        start: [scenario.start.x, scenario.start.y, scenario.start.heading],
        goal: [scenario.goal.x, scenario.goal.y, scenario.goal.heading],
    };
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(format!("{}.toml", scenario.name));
    fs::write(&path, format!("{header}{text}"))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// Reads a scenario file; the field path is resolved relative to it.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let doc: ScenarioFile = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })?;
    let field_path = path.parent().unwrap_or(Path::new(".")).join(&doc.field);
    let field = ScalarField::load(field_path)?;
    Scenario::new(
        doc.name,
        field,
        Pose2::new(doc.start[0], doc.start[1], doc.start[2]),
        Pose2::new(doc.goal[0], doc.goal[1], doc.goal[2]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioSpec {
        ScenarioSpec {
            width: 60,
            height: 50,
            endpoint_margin: 5.0,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario("x", 42, &small()).unwrap();
        let b = generate_scenario("x", 42, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario("x", 43, &small()).unwrap();
        assert_ne!(a.field, c.field);
    }

    #[test]
    fn no_lobes_no_steps_is_constant() {
        let spec = ScenarioSpec {
            lobes: 0,
            steps: 0,
            base_level: 0.37,
            ..small()
        };
        let s = generate_scenario("flat", 1, &spec).unwrap();
        assert!(s.field.values().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn single_vertical_step_splits_the_field() {
        let spec = ScenarioSpec {
            lobes: 0,
            steps: 0,
            base_level: 0.2,
            fixed_steps: vec![Step {
                through: [30.0, 0.0],
                normal_angle: 0.0,
                delta: 0.5,
            }],
            ..small()
        };
        let f = generate_scenario("step", 1, &spec).unwrap().field;
        for j in 0..f.height() {
            for i in 0..f.width() {
                let expected = if i < 30 { 0.2 } else { 0.7 };
                assert_eq!(f.value(i, j), expected);
            }
        }
        // horizontal differences are nonzero only across the boundary column
        for j in 0..f.height() {
            for i in 0..f.width() - 1 {
                let d = (f.value(i + 1, j) - f.value(i, j)).abs();
                assert_eq!(d > 0.0, i == 29);
            }
        }
    }

    #[test]
    fn obstacles_exceed_threshold() {
        let spec = ScenarioSpec {
            width: 120,
            height: 120,
            obstacles: 2,
            ..ScenarioSpec::default()
        };
        let s = generate_scenario("obs", 9, &spec).unwrap();
        assert!(s.field.values().iter().any(|&v| v > 0.9));
        assert!(s.field.sample_bilinear(s.start.position()).unwrap() <= 0.9);
    }

    #[test]
    fn degenerate_dimensions_are_rejected() {
        let spec = ScenarioSpec {
            width: 1,
            ..small()
        };
        assert!(matches!(
            generate_scenario("bad", 0, &spec),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn scenario_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scenario("rt", 5, &small()).unwrap();
        let path = save_scenario(&s, dir.path(), "# generated\n").unwrap();
        assert_eq!(load_scenario(path).unwrap(), s);
    }

    #[test]
    fn endpoint_search_widens_until_a_free_cell() {
        let field = ScalarField::from_fn(Point2::origin(), 1.0, 40, 40, |p| {
            if p.x < 5.0 && p.y < 5.0 {
                0.1
            } else {
                0.95
            }
        })
        .unwrap();
        let c = calmest_near(&field, Point2::new(30.0, 30.0), 2.0).unwrap();
        assert!(c.x < 5.0 && c.y < 5.0);
        let blocked = ScalarField::constant(Point2::origin(), 1.0, 10, 10, 0.95).unwrap();
        assert!(calmest_near(&blocked, Point2::new(5.0, 5.0), 2.0).is_err());
    }
}
