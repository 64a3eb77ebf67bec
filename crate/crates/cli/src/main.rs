mod instance;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use eh_allocate::harness::{
    run_experiment, timing_benchmark, write_curves_csv, write_gaps_csv, write_records_jsonl, write_timing_csv,
    ExperimentConfig, TimingConfig, TimingRow,
};
use eh_allocate::solver::{check_feasible, SolverDiagnostics};
use eh_allocate::validate::run_suites;
use eh_allocate::{run_policy, PolicyOptions};

use instance::InstanceSpec;

#[derive(Parser)]
#[command(
    name = "eh-allocate",
    version,
    about = "Power allocation for energy-harvesting remote estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single instance and print the allocation as JSON.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Replaces every seed in the instance description.
        #[arg(long)]
        seed: Option<u64>,
        /// Reject energy arriving at zero-variance slots.
        #[arg(long)]
        strict: bool,
        /// Also write the result to DIR/solution.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo sweep and write CSV summaries.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "EH_ALLOCATE_JOBS")]
        jobs: Option<usize>,
        #[arg(long)]
        strict: bool,
    },
    /// Time the policies over growing horizons.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Trials per size when no config is given.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        strict: bool,
    },
    /// Run the property suites.
    Validate {
        #[arg(long)]
        only: Option<String>,
    },
}

#[derive(Serialize)]
struct SolveOutput {
    policy: String,
    allocation: Vec<f64>,
    energy: Vec<f64>,
    mse: f64,
    normalized_mse: f64,
    feasible: bool,
    worst_violation: f64,
    worst_constraint: String,
    kkt_residual: Option<f64>,
    stationarity: Option<f64>,
    converged: bool,
    wall_time: f64,
    diagnostics: Option<SolverDiagnostics>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn solve(config: &Path, seed: Option<u64>, strict: bool, out: Option<&Path>) -> Result<ExitCode> {
    let mut spec: InstanceSpec = read_json(config)?;
    if let Some(seed) = seed {
        spec.override_seed(seed);
    }
    let inst = spec.instance()?;
    let opts = PolicyOptions {
        strict,
        t_d: spec.t_d,
        solver: spec.solver.clone(),
    };
    let result = run_policy(spec.policy, &inst, &opts)?;
    let report = check_feasible(&result.alloc, &inst.region())?;
    let output = SolveOutput {
        policy: result.policy_id,
        allocation: result.alloc.a().to_vec(),
        energy: result.alloc.energy().to_vec(),
        mse: result.mse,
        normalized_mse: result.normalized_mse,
        feasible: report.feasible,
        worst_violation: report.worst_violation,
        worst_constraint: report.worst_constraint,
        kkt_residual: result.diagnostics.as_ref().map(|d| d.kkt_residual),
        stationarity: result.diagnostics.as_ref().map(|d| d.stationarity),
        converged: result.converged,
        wall_time: result.wall_time,
        diagnostics: result.diagnostics,
    };
    let json = serde_json::to_string_pretty(&output)?;
    println!("{json}");
    if let Some(dir) = out {
        create_dir(dir)?;
        fs::write(dir.join("solution.json"), &json)?;
    }
    if !output.converged {
        eprintln!("warning: solver did not converge");
    }
    if !output.feasible {
        eprintln!("warning: allocation violates {}", output.worst_constraint);
    }
    Ok(if output.converged && output.feasible {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

/// Mean per-policy solve time from the trial records, relative to `optimal`.
fn timing_from_records(n: usize, records: &[eh_allocate::harness::TrialRecord]) -> Vec<TimingRow> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records.iter().filter(|r| r.nmse.is_some()) {
        let e = sums.entry(&r.policy).or_insert_with(|| {
            order.push(r.policy.as_str());
            (0.0, 0)
        });
        e.0 += r.wall_time;
        e.1 += 1;
    }
    let mean = |p: &str| sums.get(p).map(|(t, c)| t / *c as f64);
    let reference = mean("optimal").or_else(|| order.first().and_then(|p| mean(p)));
    order
        .iter()
        .map(|&p| {
            let mean_time = mean(p).unwrap_or(0.0);
            TimingRow {
                n,
                policy: p.to_string(),
                mean_time,
                normalized_time: reference.map_or(f64::NAN, |r| mean_time / r),
            }
        })
        .collect()
}

/// The resolved configuration; feeding it back through `--config` repeats the run.
fn write_manifest<C: Serialize>(out: &Path, cfg: &C) -> Result<()> {
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

fn experiment(config: &Path, out: &Path, seed: Option<u64>, jobs: Option<usize>, strict: bool) -> Result<ExitCode> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    cfg.options.strict |= strict;
    cfg.validate()?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    create_dir(out)?;
    let result = run_experiment(&cfg, jobs)?;
    write_curves_csv(&out.join("curves.csv"), &result.stats)?;
    write_gaps_csv(&out.join("gaps.csv"), &result.stats)?;
    write_timing_csv(&out.join("timing.csv"), &timing_from_records(cfg.n, &result.records))?;
    write_records_jsonl(&out.join("records.jsonl"), &result.records)?;
    write_manifest(out, &cfg)?;
    for (key, count) in &result.stats.failures {
        eprintln!("warning: {count} failed trials for {key}");
    }
    for v in &result.violations {
        eprintln!(
            "warning: ordering violated at p = {} trial {} (seed {}): {}",
            v.p, v.trial, v.seed, v.detail
        );
    }
    println!(
        "wrote {} curve points and {} gap points to {}",
        result.stats.curves.len(),
        result.stats.gaps.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn bench(config: Option<&Path>, out: &Path, seed: Option<u64>, trials: usize, strict: bool) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(path) => read_json(path)?,
        None => TimingConfig::standard(trials),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    cfg.options.strict |= strict;
    let rows = timing_benchmark(&cfg)?;
    create_dir(out)?;
    write_timing_csv(&out.join("timing.csv"), &rows)?;
    write_manifest(out, &cfg)?;
    for r in &rows {
        println!(
            "n = {:3}  {:12}  {:.3e} s  x{:.3}",
            r.n, r.policy, r.mean_time, r.normalized_time
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(only: Option<&str>) -> Result<ExitCode> {
    let reports = run_suites(only)?;
    let mut ok = true;
    for r in &reports {
        if r.passed() {
            println!("pass  {} ({} cases)", r.name, r.cases);
        } else {
            ok = false;
            println!("FAIL  {} ({} of {} cases)", r.name, r.failures.len(), r.cases);
            for (seed, msg) in &r.failures {
                println!("      seed {seed}: {msg}");
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve {
            config,
            seed,
            strict,
            out,
        } => solve(config, *seed, *strict, out.as_deref()),
        Command::Experiment {
            config,
            out,
            seed,
            jobs,
            strict,
        } => experiment(config, out, *seed, *jobs, *strict),
        Command::Bench {
            config,
            out,
            seed,
            trials,
            strict,
        } => bench(config.as_deref(), out, *seed, *trials, *strict),
        Command::Validate { only } => validate(only.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
