use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use mpcc::dtqn_agent::{check_gradients, Agent, AgentConfig, AgentError};
use mpcc::harness::{
    across_runs, emit_scenario, load_scenario, run_scenario, summarize, train, MetricLog, MetricsError, RunError,
    RunOutput, Scenario, ScenarioError, Summary,
};
use serde::Serialize;
use thiserror::Error;

const METRICS: &str = "metrics.csv";
const SUMMARY: &str = "summary.json";
const SCENARIO: &str = "scenario.json";

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("scenario {0} has no sweep")]
    NoSweep(String),
    #[error("no run directories under {0}")]
    NothingToReport(PathBuf),
    #[error("{0} run(s) disagree with their stored summary")]
    Mismatch(usize),
    #[error("gradient check failed")]
    GradCheck,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(name = "mpcc", version, about = "Multipath congestion-control lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed of a scenario and write its metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Trained checkpoint for learning algorithms.
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Apply this value of the scenario's sweep parameter.
        #[arg(long)]
        value: Option<f64>,
    },
    /// Run every sweep value over a range of seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Seeds per value; defaults to the scenario's count.
        #[arg(long)]
        seeds: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Train an agent on a scenario's network.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the training metrics as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check Q-network gradients against central differences.
    GradCheck {
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Recompute summaries from the metrics CSVs under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Serialize)]
struct SweepPoint {
    value: Option<f64>,
    seeds: u32,
    goodput_mean_bps: f64,
    goodput_std_bps: f64,
    rtt_mean_ms: f64,
    rtt_std_ms: f64,
}

fn load_agent(path: Option<&Path>) -> Result<Option<Agent>, CliError> {
    path.map(Agent::load).transpose().map_err(CliError::from)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_run(dir: &Path, sc: &Scenario, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    out.log.write(dir.join(METRICS))?;
    write_json(&dir.join(SUMMARY), &out.summary)?;
    let path = dir.join(SCENARIO);
    fs::write(&path, emit_scenario(sc)).map_err(io_err(&path))
}

fn print_summary(label: &str, s: &Summary) {
    println!(
        "{label}: goodput {:.2} ± {:.2} Mbps, RTT {:.2} ± {:.2} ms",
        s.goodput_mean_bps / 1e6,
        s.goodput_std_bps / 1e6,
        s.rtt_mean_ms,
        s.rtt_std_ms
    );
    if let Some(j) = s.jfi {
        println!("{label}: JFI {j:.4}");
    }
    for f in &s.fct {
        match f.fct_s {
            Some(t) => println!("{label}: {} bytes finished in {:.4} s", f.bytes, t),
            None => println!("{label}: {} bytes did not finish", f.bytes),
        }
    }
}

fn cmd_run(scenario: &Path, seed: u64, out: &Path, agent: Option<&Path>, value: Option<f64>) -> Result<(), CliError> {
    let base = load_scenario(scenario)?;
    let sc = match value {
        Some(_) if base.sweep.is_none() => return Err(CliError::NoSweep(base.name)),
        Some(v) => base.with_value(v),
        None => Scenario { sweep: None, ..base },
    };
    let agent = load_agent(agent)?;
    let run = run_scenario(&sc, seed, agent.as_ref())?;
    write_run(out, &sc, &run)?;
    print_summary(&sc.name, &run.summary);
    Ok(())
}

fn cmd_sweep(scenario: &Path, seeds: Option<u32>, out: &Path, agent: Option<&Path>) -> Result<(), CliError> {
    let base = load_scenario(scenario)?;
    let seeds = seeds.unwrap_or(base.seeds);
    let agent = load_agent(agent)?;
    let values: Vec<Option<f64>> = match &base.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut points = Vec::new();
    for v in values {
        let (sc, label) = match v {
            Some(v) => (base.with_value(v), format!("value-{v}")),
            None => (
                Scenario {
                    sweep: None,
                    ..base.clone()
                },
                "base".to_string(),
            ),
        };
        let mut goodput = Vec::new();
        let mut rtt = Vec::new();
        for seed in 0..seeds as u64 {
            let run = run_scenario(&sc, seed, agent.as_ref())?;
            write_run(&out.join(&label).join(format!("seed-{seed}")), &sc, &run)?;
            goodput.push(run.summary.goodput_mean_bps);
            rtt.push(run.summary.rtt_mean_ms);
        }
        let (gm, gs) = across_runs(&goodput);
        let (rm, rs) = across_runs(&rtt);
        println!(
            "{label}: goodput {:.2} ± {:.2} Mbps, RTT {rm:.2} ± {rs:.2} ms over {seeds} seeds",
            gm / 1e6,
            gs / 1e6
        );
        points.push(SweepPoint {
            value: v,
            seeds,
            goodput_mean_bps: gm,
            goodput_std_bps: gs,
            rtt_mean_ms: rm,
            rtt_std_ms: rs,
        });
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&out.join("sweep.json"), &points)
}

fn cmd_train(scenario: &Path, steps: u64, seed: u64, checkpoint: &Path, log: Option<&Path>) -> Result<(), CliError> {
    let sc = load_scenario(scenario)?;
    let outcome = train(&sc, steps, seed)?;
    outcome.agent.save(checkpoint)?;
    if let Some(path) = log {
        outcome.log.write(path)?;
    }
    info!("checkpoint written to {}", checkpoint.display());
    println!(
        "trained {steps} steps over {} episodes, {} gradient steps, final lr {:.2e}",
        outcome.episodes,
        outcome.agent.train_steps(),
        outcome.agent.lr()
    );
    Ok(())
}

fn cmd_grad_check(seed: u64, step: f64, tolerance: f64) -> Result<(), CliError> {
    let cfg = AgentConfig {
        subflows: 2,
        n_actions: 9,
        embedding_dim: 8,
        ff_dim: 8,
        heads: 2,
        context_len: 4,
        ..AgentConfig::default()
    };
    let report = check_gradients(&cfg, 3, seed, step, tolerance);
    println!(
        "checked {} scalars, max relative error {:.3e} at {:?} (tolerance {:.0e})",
        report.checked, report.max_rel_error, report.worst, report.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::GradCheck)
    }
}

/// Directories holding both a scenario and its metrics.
fn run_dirs(root: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if root.join(SCENARIO).is_file() && root.join(METRICS).is_file() {
        found.push(root.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        run_dirs(&dir, found)?;
    }
    Ok(())
}

fn cmd_report(input: &Path) -> Result<(), CliError> {
    let mut dirs = Vec::new();
    run_dirs(input, &mut dirs)?;
    if dirs.is_empty() {
        return Err(CliError::NothingToReport(input.to_path_buf()));
    }
    let mut mismatches = 0;
    for dir in &dirs {
        let sc = load_scenario(dir.join(SCENARIO))?;
        let log = MetricLog::read(dir.join(METRICS))?;
        let summary = summarize(&log, &sc);
        let stored = dir.join(SUMMARY);
        if stored.is_file() {
            let text = fs::read_to_string(&stored).map_err(io_err(&stored))?;
            let old: Summary = serde_json::from_str(&text)?;
            if old != summary {
                mismatches += 1;
                println!("{}: recomputed summary differs from {SUMMARY}", dir.display());
            }
        }
        print_summary(&dir.display().to_string(), &summary);
    }
    if mismatches > 0 {
        return Err(CliError::Mismatch(mismatches));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            agent,
            value,
        } => cmd_run(scenario, *seed, out, agent.as_deref(), *value),
        Command::Sweep {
            scenario,
            seeds,
            out,
            agent,
        } => cmd_sweep(scenario, *seeds, out, agent.as_deref()),
        Command::Train {
            scenario,
            steps,
            seed,
            checkpoint,
            log,
        } => cmd_train(scenario, *steps, *seed, checkpoint, log.as_deref()),
        Command::GradCheck { seed, step, tolerance } => cmd_grad_check(*seed, *step, *tolerance),
        Command::Report { input } => cmd_report(input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
