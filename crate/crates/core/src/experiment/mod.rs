//! Experiment grids behind the command-line tool: kernel benchmark, planning
//! with optional vessel simulation, and the alpha sweep.
//!
//! Every cell draws its randomness from seeds derived from the base seed and
//! the cell's coordinates, so results do not depend on thread count or
//! scheduling order.

mod grid;

pub use grid::{
    bench_csv, planner_turn_radius, run_kernel_bench, run_planning_grid, runs_csv, sorted_runs,
    summary_csv, sweep_alpha, sweep_csv, BenchRow, GridReport, KernelSummary, PlanRun, SweepRow,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::planners::{CostWeights, PlannerKind, RrtOptions};
use crate::scenario::{default_specs, generate_scenario, load_scenario, suite_seed, Scenario};
use crate::survey::{RmseSchedule, SensorModel, SurveyOptions};
use crate::vessel::{SimulationOptions, VesselParams};

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.75, 2.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Independent repetitions per scenario (survey noise and RRT* sampling).
    pub replicates: usize,
    /// Names of default scenarios to run (a to f).
    pub scenarios: Vec<String>,
    /// Load `<dir>/<name>.toml` instead of generating scenarios.
    pub scenario_dir: Option<PathBuf>,
    /// Overrides the generated scenarios' width and height in cells.
    pub extent_cells: Option<usize>,
    pub kernels: Vec<KernelKind>,
    /// Kernel of the survey model used for planning.
    pub plan_kernel: KernelKind,
    pub alphas: Vec<f64>,
    pub planners: Vec<PlannerKind>,
    pub rmse_schedule: RmseSchedule,
    /// Not part of the config hash: results do not depend on it.
    pub threads: Option<usize>,
    pub sensor: SensorModel,
    pub survey: SurveyOptions,
    pub weights: CostWeights,
    pub rrt: RrtOptions,
    /// Explicit Dubins turn radius; by default the vessel's steady full-rudder
    /// radius times `turn_radius_margin`.
    pub turn_radius: Option<f64>,
    pub turn_radius_margin: f64,
    pub vessel: VesselParams,
    pub simulation: SimulationOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 3,
            scenarios: default_specs().into_iter().map(|(n, _)| n).collect(),
            scenario_dir: None,
            extent_cells: None,
            kernels: KernelKind::all().to_vec(),
            plan_kernel: KernelKind::AdditiveMatern,
            alphas: DEFAULT_ALPHAS.to_vec(),
            planners: vec![PlannerKind::AStar, PlannerKind::RrtStar],
            rmse_schedule: RmseSchedule::EveryTurn,
            threads: None,
            sensor: SensorModel::default(),
            survey: SurveyOptions::default(),
            weights: CostWeights::default(),
            rrt: RrtOptions::default(),
            turn_radius: None,
            turn_radius_margin: 1.2,
            vessel: VesselParams::default(),
            simulation: SimulationOptions::default(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(config_error("scenario list is empty"));
        }
        if self.replicates == 0 {
            return Err(config_error("replicates must be at least 1"));
        }
        if self.scenario_dir.is_none() {
            let known: Vec<String> = default_specs().into_iter().map(|(n, _)| n).collect();
            if let Some(bad) = self.scenarios.iter().find(|s| !known.contains(s)) {
                return Err(config_error(format!("unknown scenario '{bad}'")));
            }
        }
        if self.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(config_error("alpha values must be finite and non-negative"));
        }
        if self.threads == Some(0) {
            return Err(config_error("threads must be at least 1"));
        }
        if self.extent_cells.is_some_and(|n| n < 2) {
            return Err(config_error("extent_cells must be at least 2"));
        }
        if let Some(r) = self.turn_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(config_error("turn_radius must be positive"));
            }
        }
        if !(self.turn_radius_margin >= 1.0 && self.turn_radius_margin.is_finite()) {
            return Err(config_error("turn_radius_margin must be at least 1"));
        }
        let inner = || -> Result<()> {
            self.sensor.validate()?;
            self.weights.validate()?;
            self.vessel.validate()?;
            for k in self.kernels.iter().chain([&self.plan_kernel]) {
                self.survey.initial_hyper.validate(*k)?;
            }
            Ok(())
        };
        inner().map_err(|e| config_error(e.to_string()))
    }

    /// SHA-256 over the canonical JSON form of everything that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if let Some(dir) = &self.scenario_dir {
            return self
                .scenarios
                .iter()
                .map(|n| load_scenario(dir.join(format!("{n}.toml"))))
                .collect();
        }
        let specs = default_specs();
        self.scenarios
            .iter()
            .map(|name| {
                let index = specs
                    .iter()
                    .position(|(n, _)| n == name)
                    .expect("validated name");
                let mut spec = specs[index].1.clone();
                if let Some(n) = self.extent_cells {
                    let scale = n as f64 / spec.width as f64;
                    spec.width = n;
                    spec.height = n;
                    spec.endpoint_margin *= scale;
                    if let Some(b) = spec.barrier.as_mut() {
                        b.gap_offset *= scale;
                    }
                }
                generate_scenario(name, suite_seed(self.seed, index), &spec)
            })
            .collect()
    }
}

/// Seed for one cell of an experiment, derived from the base seed and the
/// cell's coordinates.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Writes result files under one directory, tagging each with the config hash.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>, hash: String) -> Self {
        Self {
            root: root.into(),
            hash,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn header(&self) -> String {
        format!("# config-hash: {}\n", self.hash)
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        Ok(path)
    }

    pub fn write_csv(&self, rel: &str, body: &str) -> Result<PathBuf> {
        let path = self.prepare(rel)?;
        fs::write(&path, format!("{}{body}", self.header()))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }

    /// JSON cannot carry a comment line, so the hash goes in a `config_hash` key.
    pub fn write_json(&self, rel: &str, mut value: serde_json::Value) -> Result<PathBuf> {
        if let Some(obj) = value.as_object_mut() {
            obj.insert(
                "config_hash".into(),
                serde_json::Value::String(self.hash.clone()),
            );
        }
        let path = self.prepare(rel)?;
        let text = serde_json::to_string_pretty(&value).expect("json serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_cover_the_paper_grid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.scenarios.len(), 6);
        assert_eq!(c.alphas, vec![0.0, 0.25, 0.75, 2.0, 1000.0]);
        assert_eq!(c.planners.len(), 2);
    }

    #[test]
    fn partial_toml_overrides_defaults() {
        let c = ExperimentConfig::from_toml(
            "seed = 7\nalphas = [0.0, 2.0]\n[sensor]\nmax_range = 30.0\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.alphas, vec![0.0, 2.0]);
        assert_eq!(c.sensor.max_range, 30.0);
        assert_eq!(c.sensor.min_range, 10.0);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        let c = ExperimentConfig::from_toml("alphas = [-1.0]").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ExperimentConfig::from_toml("scenarios = []").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml("scenarios = [\"z\"]").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_threads_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            threads: Some(4),
            ..a.clone()
        };
        let c = ExperimentConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn derived_seeds_differ_by_coordinate() {
        assert_ne!(derive_seed(0, &[1, 2]), derive_seed(0, &[2, 1]));
        assert_eq!(derive_seed(3, &[4]), derive_seed(3, &[4]));
    }
}
