//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any hard criterion fails.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Point2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seabed::dubins::{normalize_angle, shortest_dubins, Pose2};
use seabed::experiment::{
    run_kernel_bench, run_planning_grid, sweep_alpha, ExperimentConfig, GridReport, PlanRun,
};
use seabed::gp::{fit, log_hyperparameter_gradient, PriorMean, TrainingSet};
use seabed::kernels::{kernel_eval, Hyperparameters, KernelKind, LogParams};
use seabed::planners::{
    astar_plan, rrt_star_plan, CostWeights, GridGraph, PlanOutcome, PlannedPath, PlannerKind,
    RrtOptions,
};
use seabed::survey::RmseSchedule;
use seabed::vessel::{
    coriolis, simulate_tracking, Dynamics, SimulationOptions, VesselParams, VesselState,
};
use seabed::{ObstacleGrid, ScalarField};

struct Outcome {
    pass: bool,
    detail: String,
    /// Reported but not counted as a failure.
    deviation: Option<String>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            detail,
            deviation: None,
        }
    }
}

fn run_criterion(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "{} criterion {id} ({name}): {} [{:.1} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    if !in_time {
        println!("     criterion {id} exceeded its runtime budget");
    }
    if let Some(d) = out.deviation {
        println!("     deviation (not a failure): {d}");
    }
    pass
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point2<f64>> {
    (0..n)
        .map(|_| Point2::new(rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)))
        .collect()
}

fn gp_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = random_points(&mut rng, 50, 100.0);
    let ys: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for kind in [
        KernelKind::SquaredExponential,
        KernelKind::Matern32,
        KernelKind::Matern52,
        KernelKind::AdditiveMatern,
    ] {
        let h = Hyperparameters::new(8.0, 1.0, 0.0);
        let m = fit(TrainingSet::new(pts.clone(), ys.clone()).unwrap(), kind, h).unwrap();
        for (p, y) in pts.iter().zip(&ys) {
            let pr = m.predict(p);
            worst_mean = worst_mean.max((pr.mean - y).abs());
            worst_var = worst_var.max(pr.variance);
        }
    }
    Outcome::new(
        worst_mean < 1e-6 && worst_var < 1e-6,
        format!("max |mean - y| {worst_mean:.2e}, max variance {worst_var:.2e}"),
    )
}

fn dense_gram(kind: KernelKind, h: &Hyperparameters, pts: &[Point2<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(pts.len(), pts.len(), |i, j| {
        kernel_eval(kind, h, &pts[i], &pts[j]).unwrap()
    })
}

fn likelihood_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_lml, mut worst_grad) = (0.0f64, 0.0f64);
    for kind in KernelKind::all() {
        let h = Hyperparameters {
            length_scale: if matches!(kind, KernelKind::NeuralNetwork { .. }) {
                15.0
            } else {
                7.0
            },
            signal_variance: 0.8,
            noise_variance: 0.02,
            matern3_weight: 0.6,
            matern5_weight: 1.3,
        };
        for n in [1usize, 5, 12, 20] {
            let pts = random_points(&mut rng, n, 40.0);
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let t = TrainingSet::new(pts.clone(), ys.clone()).unwrap();
            let m = fit(t.clone(), kind, h).unwrap();
            let k = dense_gram(kind, &h, &pts)
                + DMatrix::identity(n, n) * (h.noise_variance + m.jitter());
            let y = DVector::from_vec(ys);
            let kinv = k.clone().try_inverse().unwrap();
            let expected = -0.5 * (y.transpose() * &kinv * &y)[0]
                - 0.5 * k.determinant().ln()
                - 0.5 * n as f64 * (2.0 * PI).ln();
            worst_lml = worst_lml.max((m.log_marginal_likelihood() - expected).abs());

            let (_, grad) = log_hyperparameter_gradient(kind, &h, &t, PriorMean::Zero).unwrap();
            let layout = LogParams::new(kind, &h);
            let theta = layout.to_vec(&h);
            let step = 1e-5;
            for i in 0..theta.len() {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[i] += step;
                dn[i] -= step;
                let lml = |th: &[f64]| {
                    fit(t.clone(), kind, layout.apply(&h, th))
                        .unwrap()
                        .log_marginal_likelihood()
                };
                let numeric = (lml(&up) - lml(&dn)) / (2.0 * step);
                worst_grad = worst_grad.max((numeric - grad[i]).abs() / numeric.abs().max(1e-3));
            }
        }
    }
    Outcome::new(
        worst_lml < 1e-8 && worst_grad < 1e-4,
        format!("max |LML error| {worst_lml:.2e}, max relative gradient error {worst_grad:.2e}"),
    )
}

fn kernel_trend() -> Outcome {
    let config = ExperimentConfig {
        replicates: 3,
        rmse_schedule: RmseSchedule::FirstAndLast,
        ..ExperimentConfig::default()
    };
    let scenarios = config.scenarios().unwrap();
    let (report, summary) = run_kernel_bench(&config, &scenarios);
    if !report.failures.is_empty() {
        return Outcome::new(false, format!("failed cells: {:?}", report.failures));
    }
    let final_of = |sc: &str, k: KernelKind| {
        summary
            .iter()
            .find(|s| s.scenario == sc && s.kernel == k)
            .map(|s| s.mean_final_rmse)
            .unwrap()
    };
    let wins = scenarios
        .iter()
        .filter(|s| {
            final_of(&s.name, KernelKind::AdditiveMatern)
                <= final_of(&s.name, KernelKind::SquaredExponential)
        })
        .count();
    // Per kernel: scenario- and seed-averaged final over first-turn RMSE.
    let worst_ratio = config
        .kernels
        .iter()
        .map(|k| {
            let rows: Vec<_> = summary.iter().filter(|s| s.kernel == *k).collect();
            let first: f64 = rows.iter().map(|s| s.mean_first_rmse).sum();
            let last: f64 = rows.iter().map(|s| s.mean_final_rmse).sum();
            println!(
                "     {:<16} final/first RMSE {:.3}",
                k.to_string(),
                last / first
            );
            last / first
        })
        .fold(0.0f64, f64::max);
    for s in &summary {
        println!(
            "     {} {:<16} first {:.4} final {:.4} ratio {:.3} rank {}",
            s.scenario,
            s.kernel.to_string(),
            s.mean_first_rmse,
            s.mean_final_rmse,
            s.mean_final_rmse / s.mean_first_rmse,
            s.rank
        );
    }
    Outcome::new(
        wins >= 4 && worst_ratio < 0.4,
        format!("additive Matern <= SE on {wins}/6 scenarios, worst per-kernel final/first RMSE {worst_ratio:.3}"),
    )
}

fn dubins_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pose = |rng: &mut ChaCha8Rng| {
        Pose2::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-PI..PI),
        )
    };
    let (mut worst_len, mut worst_end) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (a, b) = (pose(&mut rng), pose(&mut rng));
        let path = shortest_dubins(a, b, rng.gen_range(1.0..15.0));
        let samples = path.sample(0.01);
        let chord: f64 = samples.windows(2).map(|w| w[0].distance(&w[1])).sum();
        worst_len = worst_len.max((chord - path.length).abs());
        let end = path.end_pose();
        worst_end = worst_end
            .max(end.distance(&b))
            .max(normalize_angle(end.heading - b.heading).abs());
    }
    let straight =
        shortest_dubins(Pose2::new(0.0, 0.0, 0.0), Pose2::new(10.0, 0.0, 0.0), 1.0).length;
    let semi = shortest_dubins(Pose2::new(0.0, 0.0, 0.0), Pose2::new(0.0, 2.0, PI), 1.0).length;
    let exact = (straight - 10.0).abs() < 1e-12 && (semi - PI).abs() < 1e-12;
    Outcome::new(
        worst_len < 0.02 && worst_end < 1e-6 && exact,
        format!("max length error {worst_len:.2e} m, max endpoint error {worst_end:.2e}, special cases exact: {exact}"),
    )
}

fn dijkstra(graph: &GridGraph, start: usize, goal: usize) -> Option<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Reverse((0f64.to_bits(), start)));
    while let Some(Reverse((bits, u))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[u] {
            continue;
        }
        if u == goal {
            return Some(d);
        }
        for (v, c) in graph.neighbors(u) {
            if d + c < dist[v] {
                dist[v] = d + c;
                heap.push(Reverse(((d + c).to_bits(), v)));
            }
        }
    }
    None
}

fn astar_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut agree, mut feasible) = (0, 0);
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(10..=50), rng.gen_range(10..=50));
        let values: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
        let field = ScalarField::new(Point2::origin(), 1.0, w, h, values).unwrap();
        let mut obstacles = ObstacleGrid::empty_like(&field);
        let density = rng.gen_range(0.0..0.35);
        for j in 0..h {
            for i in 0..w {
                obstacles.set_occupied(i, j, rng.gen_bool(density));
            }
        }
        let free = |o: &mut ObstacleGrid, rng: &mut ChaCha8Rng| {
            let (i, j) = (rng.gen_range(0..w), rng.gen_range(0..h));
            o.set_occupied(i, j, false);
            field.cell_center(i, j)
        };
        let (s, g) = (
            free(&mut obstacles, &mut rng),
            free(&mut obstacles, &mut rng),
        );
        let weights = CostWeights {
            alpha: [0.0, 0.25, 0.75, 2.0, 1000.0][rng.gen_range(0..5)],
            ..CostWeights::default()
        };
        let graph = GridGraph::new(&field, &obstacles, &weights).unwrap();
        let oracle = dijkstra(&graph, graph.node_of(s).unwrap(), graph.node_of(g).unwrap());
        let ok = match (
            astar_plan(&field, &obstacles, s, g, &weights).unwrap(),
            oracle,
        ) {
            (PlanOutcome::Feasible(p), Some(c)) => {
                feasible += 1;
                p.search_cost == c
            }
            (PlanOutcome::Infeasible(_), None) => true,
            _ => false,
        };
        agree += ok as usize;
    }
    Outcome::new(
        agree == 20,
        format!("{agree}/20 instances match exactly ({feasible} feasible)"),
    )
}

fn rrt_convergence() -> Outcome {
    let field = ScalarField::constant(Point2::origin(), 1.0, 200, 200, 0.0).unwrap();
    let obstacles = ObstacleGrid::empty_like(&field);
    let (s, g) = (Pose2::new(20.0, 20.0, 0.0), Pose2::new(180.0, 170.0, 1.5));
    let optimal = shortest_dubins(s, g, 10.0).length;
    let mut ratios = Vec::new();
    let mut monotone = true;
    for seed in 0..5 {
        let opts = RrtOptions {
            iterations: 5000,
            turn_radius: 10.0,
            seed,
            ..RrtOptions::default()
        };
        let (out, trace) = rrt_star_plan(
            &field,
            &obstacles,
            s,
            g,
            &CostWeights::with_alpha(0.0),
            &opts,
        )
        .unwrap();
        monotone &= trace.best_cost.windows(2).all(|w| w[1] <= w[0]);
        ratios.push(out.path().map_or(f64::INFINITY, |p| p.cost / optimal));
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[2];
    Outcome::new(
        median <= 1.05 && monotone,
        format!("median cost ratio {median:.4} (per seed {ratios:.4?}), traces non-increasing: {monotone}"),
    )
}

fn alpha_tradeoff(report: &GridReport<PlanRun>, config: &ExperimentConfig) -> Outcome {
    if !report.failures.is_empty() {
        return Outcome::new(false, format!("failed cells: {:?}", report.failures));
    }
    let rows = sweep_alpha(&report.rows, &config.planners, &config.alphas);
    let mut ok = true;
    let mut notes = Vec::new();
    for planner in &config.planners {
        let r: Vec<_> = rows.iter().filter(|r| r.planner == *planner).collect();
        for w in r.windows(2) {
            let chi_ok = w[1].mean_complexity <= w[0].mean_complexity * 1.05;
            let len_ok = w[1].length >= w[0].length * 0.95;
            if !(chi_ok && len_ok) {
                notes.push(format!("{planner} alpha {} -> {}", w[0].alpha, w[1].alpha));
            }
            ok &= chi_ok && len_ok && w[1].instances > 0;
        }
        for x in &r {
            println!(
                "     {:<8} alpha {:<6} n {} mean chi {:.4} max chi {:.4} length {:.1}",
                planner.to_string(),
                x.alpha,
                x.instances,
                x.mean_complexity,
                x.max_complexity,
                x.length
            );
        }
    }
    Outcome::new(
        ok,
        if notes.is_empty() {
            "mean complexity non-increasing and length non-decreasing within 5% for both planners"
                .into()
        } else {
            format!("violations: {}", notes.join(", "))
        },
    )
}

fn vessel_tracking() -> Outcome {
    let p = VesselParams::default();
    let field = ScalarField::constant(Point2::origin(), 1.0, 600, 300, 0.0).unwrap();
    let pts = [Point2::new(20.0, 100.0), Point2::new(520.0, 100.0)];
    let path = PlannedPath {
        planner: PlannerKind::AStar,
        alpha: 0.0,
        waypoints: pts.iter().map(|q| Pose2::new(q.x, q.y, 0.0)).collect(),
        stations: vec![0.0, 500.0],
        length: 500.0,
        chi: 0.0,
        cost: 500.0,
        search_cost: 500.0,
    };
    let ex = simulate_tracking(&path, &p, &field, &SimulationOptions::default()).unwrap();
    let late = ex
        .trajectory
        .iter()
        .filter(|s| s.t > 10.0)
        .fold(0.0f64, |m, s| m.max(s.cross_track.abs()));

    let d = Dynamics::new(&p).unwrap();
    let end = |dt: f64| {
        let mut s = VesselState::new(0.0, 0.0, 0.2, 0.5, 0.1, 0.0);
        for k in 0..(20.0 / dt).round() as usize {
            s = d.step(&s, Vector2::new(20.0, 0.4), dt, k).unwrap();
        }
        s.position()
    };
    let e: Vec<Point2<f64>> = [0.4, 0.2, 0.1, 0.05].iter().map(|&dt| end(dt)).collect();
    let errs: Vec<f64> = e.windows(2).map(|w| (w[0] - w[1]).norm()).collect();
    let min_ratio = errs
        .windows(2)
        .map(|w| w[0] / w[1])
        .fold(f64::INFINITY, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_work = 0.0f64;
    for _ in 0..1000 {
        let nu = Vector3::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-2.0..2.0),
        );
        worst_work = worst_work.max(nu.dot(&(coriolis(&p.mass_matrix(), &nu) * nu)).abs());
    }
    Outcome::new(
        late < 0.5 && ex.metrics.completed && min_ratio >= 8.0 && worst_work <= 1e-12,
        format!("max |e| after 10 s {late:.3} m, RK4 error ratio >= {min_ratio:.1}, max |nu^T C nu| {worst_work:.1e}"),
    )
}

fn planned_vs_executed(report: &GridReport<PlanRun>) -> Outcome {
    if !report.failures.is_empty() {
        return Outcome::new(false, format!("failed cells: {:?}", report.failures));
    }
    let completed: Vec<(&PlanRun, &PlannedPath)> = report
        .rows
        .iter()
        .filter_map(|r| match (&r.path, r.executed()) {
            (Some(p), Some(m)) if m.completed => Some((r, p)),
            _ => None,
        })
        .collect();
    let longer = completed
        .iter()
        .filter(|(r, p)| r.executed().unwrap().executed_length >= p.length)
        .count();
    let frac = longer as f64 / completed.len().max(1) as f64;
    let gap = |planner: PlannerKind| {
        let v: Vec<f64> = completed
            .iter()
            .filter(|(r, _)| r.planner == planner)
            .map(|(r, p)| r.executed().unwrap().executed_cost - p.cost)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let (ga, gr) = (gap(PlannerKind::AStar), gap(PlannerKind::RrtStar));
    let mut alphas: Vec<f64> = completed.iter().map(|(r, _)| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    for a in alphas {
        let at = |planner: PlannerKind| {
            let v: Vec<f64> = completed
                .iter()
                .filter(|(r, _)| r.planner == planner && r.alpha == a)
                .map(|(r, p)| r.executed().unwrap().executed_cost - p.cost)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        println!(
            "     alpha {a:<6} mean cost gap A* {:.2}, RRT* {:.2}",
            at(PlannerKind::AStar),
            at(PlannerKind::RrtStar)
        );
    }
    let mut out = Outcome::new(
        frac >= 0.6,
        format!(
            "executed >= planned length in {longer}/{} completed runs ({:.1}%) of {} total; mean cost gap A* {ga:.2}, RRT* {gr:.2}",
            completed.len(),
            100.0 * frac,
            report.rows.len()
        ),
    );
    if gr > ga {
        out.deviation = Some(format!("RRT* cost gap {gr:.2} exceeds A* gap {ga:.2}"));
    }
    out
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(
        &config,
        "scenarios = [\"a\", \"c\"]\nreplicates = 1\nextent_cells = 60\nkernels = [\"se\", \"additive_matern\"]\n\
         rmse_schedule = \"first_and_last\"\n[rrt]\niterations = 1500\n",
    )
    .unwrap();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for cmd in [
        "gen-scenarios",
        "kernel-bench",
        "plan",
        "simulate",
        "sweep-alpha",
    ] {
        let run = |name: &str, threads: &str| {
            let out = dir.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_seabed"))
                .args([
                    "--config",
                    config.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--seed",
                    "3",
                    "--threads",
                    threads,
                    cmd,
                ])
                .env("RUST_LOG", "error")
                .status()
                .unwrap();
            (status.code(), out)
        };
        let ((c1, a), (c2, b)) = (run(&format!("{cmd}-1"), "1"), run(&format!("{cmd}-2"), "2"));
        if c1 != Some(0) || c2 != Some(0) {
            mismatches.push(format!("{cmd} exit codes {c1:?} {c2:?}"));
            continue;
        }
        let (fa, fb) = (list_files(&a), list_files(&b));
        if fa.is_empty() || fa.len() != fb.len() {
            mismatches.push(format!("{cmd} produced {} vs {} files", fa.len(), fb.len()));
            continue;
        }
        for rel in &fa {
            compared += 1;
            if fs::read(a.join(rel)).unwrap() != fs::read(b.join(rel)).unwrap_or_default() {
                mismatches.push(format!("{cmd}: {}", rel.display()));
            }
        }
    }
    Outcome::new(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{compared} output files byte-identical across reruns (1 and 2 threads)")
        } else {
            format!("differences: {mismatches:?}")
        },
    )
}

fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

#[test]
fn acceptance_criteria() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let sec = Duration::from_secs;
    let mut results = vec![
        run_criterion(1, "GP exactness", sec(1), gp_exactness),
        run_criterion(2, "marginal likelihood oracle", sec(5), likelihood_oracle),
        run_criterion(3, "kernel trend", min(15), kernel_trend),
        run_criterion(4, "Dubins geometry", sec(5), dubins_geometry),
        run_criterion(5, "A* optimality", sec(10), astar_optimality),
        run_criterion(6, "RRT* convergence", min(2), rrt_convergence),
    ];

    let config = ExperimentConfig::default();
    results.push(run_criterion(7, "alpha trade-off", min(10), || {
        let scenarios = config.scenarios().unwrap();
        let report = run_planning_grid(&config, &scenarios, false).unwrap();
        alpha_tradeoff(&report, &config)
    }));
    results.push(run_criterion(
        8,
        "vessel tracking",
        sec(30),
        vessel_tracking,
    ));
    results.push(run_criterion(9, "planned vs executed", min(30), || {
        let scenarios = config.scenarios().unwrap();
        let report = run_planning_grid(&config, &scenarios, true).unwrap();
        planned_vs_executed(&report)
    }));
    results.push(run_criterion(
        10,
        "CLI determinism",
        min(30),
        cli_determinism,
    ));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
