use nalgebra::Point2;
use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, ExperimentConfig};
use crate::error::Result;
use crate::field::{ObstacleGrid, ScalarField};
use crate::kernels::KernelKind;
use crate::planners::{
    astar_plan, predict_field, rrt_star_plan, PlanOutcome, PlannedPath, PlannerKind,
};
use crate::scenario::Scenario;
use crate::survey::{generate_lawnmower, run_survey, RmseSchedule};
use crate::vessel::{achievable_turn_radius, simulate_tracking, Execution, ExecutionMetrics};

const SURVEY_TAG: u64 = 1;
const RRT_TAG: u64 = 2;

/// Rows that completed plus a description of every cell that failed.
#[derive(Debug, Clone)]
pub struct GridReport<T> {
    pub rows: Vec<T>,
    pub failures: Vec<String>,
}

impl<T> Default for GridReport<T> {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub kernel: KernelKind,
    pub replicate: usize,
    pub turn: usize,
    pub samples: usize,
    pub fit_points: usize,
    pub reestimated: bool,
    pub rmse: f64,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSummary {
    pub scenario: String,
    pub kernel: KernelKind,
    pub mean_first_rmse: f64,
    pub mean_final_rmse: f64,
    /// 1 for the lowest mean final RMSE in the scenario.
    pub rank: usize,
    pub winner: KernelKind,
}

fn survey_seed(config: &ExperimentConfig, scenario: usize, replicate: usize) -> u64 {
    derive_seed(
        config.seed,
        &[SURVEY_TAG, scenario as u64, replicate as u64],
    )
}

/// Runs every (scenario, kernel, replicate) survey. The same survey seed is
/// shared across kernels so they see identical soundings.
pub fn run_kernel_bench(
    config: &ExperimentConfig,
    scenarios: &[Scenario],
) -> (GridReport<BenchRow>, Vec<KernelSummary>) {
    let cells: Vec<(usize, KernelKind, usize)> = (0..scenarios.len())
        .flat_map(|s| {
            config
                .kernels
                .iter()
                .flat_map(move |&k| (0..config.replicates).map(move |r| (s, k, r)))
        })
        .collect();
    let results: Vec<Result<Vec<BenchRow>>> = cells
        .par_iter()
        .map(|&(s, kernel, r)| {
            let sc = &scenarios[s];
            log::info!(
                "kernel bench: scenario {} kernel {kernel} replicate {r}",
                sc.name
            );
            let plan =
                generate_lawnmower(&sc.field, config.survey.track_spacing, config.survey.axis)?;
            let log = run_survey(
                &sc.field,
                kernel,
                &config.sensor,
                &plan,
                survey_seed(config, s, r),
                &config.survey,
                config.rmse_schedule,
            )?;
            Ok(log
                .turns
                .iter()
                .map(|t| BenchRow {
                    scenario: sc.name.clone(),
                    kernel,
                    replicate: r,
                    turn: t.turn,
                    samples: t.samples,
                    fit_points: t.fit_points,
                    reestimated: t.reestimated,
                    rmse: t.rmse,
                    length_scale: t.hyper.length_scale,
                    signal_variance: t.hyper.prior_variance(kernel),
                    noise_variance: t.hyper.noise_variance,
                })
                .collect())
        })
        .collect();

    let mut report = GridReport::default();
    for (&(s, k, r), res) in cells.iter().zip(results) {
        match res {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => report.failures.push(format!(
                "scenario {} kernel {k} replicate {r}: {e}",
                scenarios[s].name
            )),
        }
    }
    let summary = summarize_kernels(&report.rows, scenarios, &config.kernels);
    (report, summary)
}

fn summarize_kernels(
    rows: &[BenchRow],
    scenarios: &[Scenario],
    kernels: &[KernelKind],
) -> Vec<KernelSummary> {
    let mut out = Vec::new();
    for sc in scenarios {
        let mut per_kernel: Vec<(KernelKind, f64, f64)> = Vec::new();
        for &k in kernels {
            let runs: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.scenario == sc.name && r.kernel == k)
                .collect();
            let replicates: Vec<usize> = {
                let mut v: Vec<usize> = runs.iter().map(|r| r.replicate).collect();
                v.dedup();
                v
            };
            let (mut first, mut last) = (Vec::new(), Vec::new());
            for rep in replicates {
                let turns: Vec<&&BenchRow> = runs.iter().filter(|r| r.replicate == rep).collect();
                if let (Some(f), Some(l)) = (turns.first(), turns.last()) {
                    first.push(f.rmse);
                    last.push(l.rmse);
                }
            }
            if !last.is_empty() {
                per_kernel.push((k, mean(&first), mean(&last)));
            }
        }
        let mut order: Vec<usize> = (0..per_kernel.len()).collect();
        order.sort_by(|&a, &b| per_kernel[a].2.total_cmp(&per_kernel[b].2).then(a.cmp(&b)));
        let Some(&best) = order.first() else { continue };
        for (rank, &i) in order.iter().enumerate() {
            let (k, f, l) = per_kernel[i];
            out.push(KernelSummary {
                scenario: sc.name.clone(),
                kernel: k,
                mean_first_rmse: f,
                mean_final_rmse: l,
                rank: rank + 1,
                winner: per_kernel[best].0,
            });
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRun {
    pub scenario: String,
    pub replicate: usize,
    pub alpha: f64,
    pub planner: PlannerKind,
    /// Why no path was produced; `None` for feasible runs.
    pub infeasible: Option<String>,
    pub path: Option<PlannedPath>,
    pub max_complexity: f64,
    pub execution: Option<Execution>,
}

impl PlanRun {
    pub fn executed(&self) -> Option<&ExecutionMetrics> {
        self.execution.as_ref().map(|e| &e.metrics)
    }

    pub fn file_stem(&self) -> String {
        format!(
            "{}_r{}_{}_a{}",
            self.scenario, self.replicate, self.planner, self.alpha
        )
    }
}

struct Prepared {
    field: ScalarField,
    obstacles: ObstacleGrid,
}

fn prepare(
    config: &ExperimentConfig,
    scenario: &Scenario,
    index: usize,
    replicate: usize,
) -> Result<Prepared> {
    log::info!("survey: scenario {} replicate {replicate}", scenario.name);
    let plan = generate_lawnmower(
        &scenario.field,
        config.survey.track_spacing,
        config.survey.axis,
    )?;
    let log = run_survey(
        &scenario.field,
        config.plan_kernel,
        &config.sensor,
        &plan,
        survey_seed(config, index, replicate),
        &config.survey,
        RmseSchedule::Never,
    )?;
    let field = predict_field(&log.model, &scenario.field);
    let obstacles = field.threshold_obstacles(config.weights.obstacle_threshold)?;
    Ok(Prepared { field, obstacles })
}

/// Largest predicted complexity over the path sampled every half meter.
fn max_along(field: &ScalarField, path: &PlannedPath) -> f64 {
    let pts = path.positions();
    let mut m = 0.0f64;
    for w in pts.windows(2) {
        let n = ((w[1] - w[0]).norm() / 0.5).ceil().max(1.0) as usize;
        for k in 0..=n {
            let p: Point2<f64> = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
            m = m.max(field.sample_bilinear(p).unwrap_or(0.0));
        }
    }
    m
}

/// Dubins turn radius handed to RRT*.
pub fn planner_turn_radius(config: &ExperimentConfig) -> Result<f64> {
    match config.turn_radius {
        Some(r) => Ok(r),
        None => Ok(config.turn_radius_margin * achievable_turn_radius(&config.vessel)?),
    }
}

/// Survey, predict, plan and optionally simulate every
/// (scenario, replicate, alpha, planner) cell. Surveys are shared across the
/// alpha and planner cells of one (scenario, replicate).
pub fn run_planning_grid(
    config: &ExperimentConfig,
    scenarios: &[Scenario],
    simulate: bool,
) -> Result<GridReport<PlanRun>> {
    let rho = planner_turn_radius(config)?;
    let pairs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let prepared: Vec<Result<Prepared>> = pairs
        .par_iter()
        .map(|&(s, r)| prepare(config, &scenarios[s], s, r))
        .collect();

    let mut report = GridReport::default();
    let mut cells = Vec::new();
    for (&(s, r), p) in pairs.iter().zip(&prepared) {
        match p {
            Ok(_) => {
                for (ai, _) in config.alphas.iter().enumerate() {
                    for &planner in &config.planners {
                        cells.push((s, r, ai, planner));
                    }
                }
            }
            Err(e) => report
                .failures
                .push(format!("scenario {} replicate {r}: {e}", scenarios[s].name)),
        }
    }
    let index_of = |s: usize, r: usize| s * config.replicates + r;

    let results: Vec<Result<PlanRun>> = cells
        .par_iter()
        .map(|&(s, r, ai, planner)| {
            let prep = prepared[index_of(s, r)]
                .as_ref()
                .expect("only prepared pairs have cells");
            let sc = &scenarios[s];
            let alpha = config.alphas[ai];
            let weights = crate::planners::CostWeights {
                alpha,
                ..config.weights
            };
            let outcome = match planner {
                PlannerKind::AStar => astar_plan(
                    &prep.field,
                    &prep.obstacles,
                    sc.start.position(),
                    sc.goal.position(),
                    &weights,
                )?,
                PlannerKind::RrtStar => {
                    let opts = crate::planners::RrtOptions {
                        turn_radius: rho,
                        // Tree growth does not depend on alpha, so one seed per
                        // instance keeps the alpha comparison paired.
                        seed: derive_seed(config.seed, &[RRT_TAG, s as u64, r as u64]),
                        ..config.rrt
                    };
                    rrt_star_plan(
                        &prep.field,
                        &prep.obstacles,
                        sc.start,
                        sc.goal,
                        &weights,
                        &opts,
                    )?
                    .0
                }
            };
            let mut run = PlanRun {
                scenario: sc.name.clone(),
                replicate: r,
                alpha,
                planner,
                infeasible: None,
                path: None,
                max_complexity: f64::NAN,
                execution: None,
            };
            match outcome {
                PlanOutcome::Infeasible(i) => run.infeasible = Some(i.reason),
                PlanOutcome::Feasible(path) => {
                    run.max_complexity = max_along(&prep.field, &path);
                    if simulate {
                        run.execution = Some(simulate_tracking(
                            &path,
                            &config.vessel,
                            &prep.field,
                            &config.simulation,
                        )?);
                    }
                    run.path = Some(path);
                }
            }
            Ok(run)
        })
        .collect();
    for (&(s, r, ai, planner), res) in cells.iter().zip(results) {
        match res {
            Ok(run) => report.rows.push(run),
            Err(e) => report.failures.push(format!(
                "scenario {} replicate {r} alpha {} planner {planner}: {e}",
                scenarios[s].name, config.alphas[ai]
            )),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub planner: PlannerKind,
    pub alpha: f64,
    /// Number of (scenario, replicate) instances averaged.
    pub instances: usize,
    pub mean_complexity: f64,
    pub max_complexity: f64,
    pub length: f64,
}

/// Averages planned metrics per planner and alpha over the (scenario,
/// replicate) instances that are feasible at every alpha for that planner,
/// so each row averages the same instances.
pub fn sweep_alpha(runs: &[PlanRun], planners: &[PlannerKind], alphas: &[f64]) -> Vec<SweepRow> {
    let mut out = Vec::new();
    for &planner in planners {
        let mut instances: Vec<(String, usize)> = runs
            .iter()
            .filter(|r| r.planner == planner)
            .map(|r| (r.scenario.clone(), r.replicate))
            .collect();
        instances.sort();
        instances.dedup();
        let complete: Vec<&(String, usize)> = instances
            .iter()
            .filter(|(s, rep)| {
                alphas.iter().all(|&a| {
                    runs.iter().any(|r| {
                        r.planner == planner
                            && &r.scenario == s
                            && r.replicate == *rep
                            && r.alpha == a
                            && r.path.is_some()
                    })
                })
            })
            .collect();
        for &alpha in alphas {
            let sel: Vec<&PlanRun> = runs
                .iter()
                .filter(|r| {
                    r.planner == planner
                        && r.alpha == alpha
                        && r.path.is_some()
                        && complete
                            .iter()
                            .any(|(s, rep)| &r.scenario == s && r.replicate == *rep)
                })
                .collect();
            let n = sel.len();
            let avg = |f: &dyn Fn(&PlanRun) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    sel.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            out.push(SweepRow {
                planner,
                alpha,
                instances: n,
                mean_complexity: avg(&|r| r.path.as_ref().unwrap().mean_complexity()),
                max_complexity: avg(&|r| r.max_complexity),
                length: avg(&|r| r.path.as_ref().unwrap().length),
            });
        }
    }
    out
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut sorted: Vec<&BenchRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.scenario, a.kernel, a.replicate, a.turn).cmp(&(
            &b.scenario,
            b.kernel,
            b.replicate,
            b.turn,
        ))
    });
    to_csv(sorted)
}

pub fn summary_csv(rows: &[KernelSummary]) -> String {
    to_csv(rows)
}

pub fn sorted_runs(runs: &[PlanRun]) -> Vec<&PlanRun> {
    let mut v: Vec<&PlanRun> = runs.iter().collect();
    v.sort_by(|a, b| {
        (&a.scenario, a.replicate, a.planner)
            .cmp(&(&b.scenario, b.replicate, b.planner))
            .then(a.alpha.total_cmp(&b.alpha))
    });
    v
}

#[derive(Serialize)]
struct PlanRecord<'a> {
    scenario: &'a str,
    replicate: usize,
    alpha: f64,
    planner: PlannerKind,
    feasible: bool,
    planned_length: Option<f64>,
    planned_chi: Option<f64>,
    planned_cost: Option<f64>,
    mean_complexity: Option<f64>,
    max_complexity: Option<f64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    scenario: &'a str,
    replicate: usize,
    alpha: f64,
    planner: PlannerKind,
    feasible: bool,
    planned_length: Option<f64>,
    planned_chi: Option<f64>,
    planned_cost: Option<f64>,
    mean_complexity: Option<f64>,
    max_complexity: Option<f64>,
    executed_length: Option<f64>,
    executed_chi: Option<f64>,
    executed_cost: Option<f64>,
    max_e: Option<f64>,
    rms_e: Option<f64>,
    completed: Option<bool>,
}

fn plan_record(r: &PlanRun) -> PlanRecord<'_> {
    let p = r.path.as_ref();
    PlanRecord {
        scenario: &r.scenario,
        replicate: r.replicate,
        alpha: r.alpha,
        planner: r.planner,
        feasible: p.is_some(),
        planned_length: p.map(|p| p.length),
        planned_chi: p.map(|p| p.chi),
        planned_cost: p.map(|p| p.cost),
        mean_complexity: p.map(|p| p.mean_complexity()),
        max_complexity: p.map(|_| r.max_complexity),
    }
}

fn run_record(r: &PlanRun) -> RunRecord<'_> {
    let p = plan_record(r);
    let m = r.executed();
    RunRecord {
        scenario: p.scenario,
        replicate: p.replicate,
        alpha: p.alpha,
        planner: p.planner,
        feasible: p.feasible,
        planned_length: p.planned_length,
        planned_chi: p.planned_chi,
        planned_cost: p.planned_cost,
        mean_complexity: p.mean_complexity,
        max_complexity: p.max_complexity,
        executed_length: m.map(|m| m.executed_length),
        executed_chi: m.map(|m| m.executed_chi),
        executed_cost: m.map(|m| m.executed_cost),
        max_e: m.map(|m| m.max_e),
        rms_e: m.map(|m| m.rms_e),
        completed: m.map(|m| m.completed),
    }
}

/// One row per run, sorted by scenario, replicate, planner and alpha.
pub fn runs_csv(runs: &[PlanRun], with_execution: bool) -> String {
    let sorted = sorted_runs(runs);
    if with_execution {
        to_csv(sorted.into_iter().map(run_record))
    } else {
        to_csv(sorted.into_iter().map(plan_record))
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    to_csv(rows)
}
