use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use seabed::error::Error;
use seabed::experiment::{
    bench_csv, run_kernel_bench, run_planning_grid, runs_csv, sorted_runs, summary_csv,
    sweep_alpha, sweep_csv, ExperimentConfig, GridReport, OutputDir, PlanRun,
};
use seabed::scenario::save_scenario;

#[derive(Parser)]
#[command(
    name = "seabed",
    version,
    about = "Seabed complexity surveys, kernel benchmarks and complexity-aware path planning"
)]
struct Cli {
    /// TOML experiment configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic scenarios as field and scenario files.
    GenScenarios,
    /// Survey every scenario with every kernel and tabulate RMSE per turn.
    KernelBench,
    /// Plan every (scenario, replicate, alpha, planner) cell on the surveyed field.
    Plan,
    /// Plan and then track every path with the simulated vessel.
    Simulate,
    /// Average planned complexity and length per alpha.
    SweepAlpha,
}

enum Failure {
    Config(String),
    Cells(usize),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            e => Failure::Other(e),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    config.validate()?;
    Ok(config)
}

fn report_failures<T>(report: &GridReport<T>) -> Result<(), Failure> {
    for f in &report.failures {
        log::error!("{f}");
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Cells(report.failures.len()))
    }
}

fn write_runs(
    out: &OutputDir,
    runs: &[PlanRun],
    failures: &[String],
    simulate: bool,
) -> Result<(), Failure> {
    let (table, dir) = if simulate {
        ("runs.csv", "trajectories")
    } else {
        ("plans.csv", "paths")
    };
    out.write_csv(table, &runs_csv(runs, simulate))?;
    let mut infeasible = Vec::new();
    for run in sorted_runs(runs) {
        let stem = run.file_stem();
        match (&run.path, &run.execution) {
            (Some(_), Some(exec)) if simulate => {
                out.write_csv(&format!("{dir}/{stem}.csv"), &exec.to_csv())?;
                out.write_json(&format!("{dir}/{stem}.json"), exec.metrics_json())?;
            }
            (Some(path), _) => {
                out.write_csv(&format!("{dir}/{stem}.csv"), &path.to_csv())?;
                out.write_json(&format!("{dir}/{stem}.json"), path.summary_json())?;
            }
            (None, _) => infeasible.push(json!({ "run": stem, "reason": run.infeasible })),
        }
    }
    let name = table.replace(".csv", "_status.json");
    out.write_json(
        &name,
        json!({ "infeasible": infeasible, "failed_cells": failures }),
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    let out = OutputDir::new(&cli.out, config.hash());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Config(e.to_string()))?;
    let scenarios = config.scenarios()?;

    pool.install(|| match cli.command {
        Command::GenScenarios => {
            let dir = out.root().join("scenarios");
            for s in &scenarios {
                save_scenario(s, &dir, &out.header())?;
            }
            log::info!("wrote {} scenarios to {}", scenarios.len(), dir.display());
            Ok(())
        }
        Command::KernelBench => {
            let (report, summary) = run_kernel_bench(&config, &scenarios);
            out.write_csv("kernel_bench.csv", &bench_csv(&report.rows))?;
            out.write_csv("kernel_summary.csv", &summary_csv(&summary))?;
            report_failures(&report)
        }
        Command::Plan | Command::Simulate => {
            let simulate = matches!(cli.command, Command::Simulate);
            let report = run_planning_grid(&config, &scenarios, simulate)?;
            write_runs(&out, &report.rows, &report.failures, simulate)?;
            report_failures(&report)
        }
        Command::SweepAlpha => {
            let report = run_planning_grid(&config, &scenarios, false)?;
            let rows = sweep_alpha(&report.rows, &config.planners, &config.alphas);
            out.write_csv("sweep_alpha.csv", &sweep_csv(&rows))?;
            out.write_csv("sweep_runs.csv", &runs_csv(&report.rows, false))?;
            report_failures(&report)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Cells(n)) => {
            eprintln!("{n} cell(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
