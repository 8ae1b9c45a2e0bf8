use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sfw_core::harness::{self, export, ExperimentConfig, HarnessError};

/// Safe Frank-Wolfe experiment runner.
#[derive(Parser)]
#[command(name = "sfw", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured variant for every repetition.
    Run(Common),
    /// Paired adaptive-SFW versus RO runs with matched seeds.
    Compare(Common),
    /// Parse and resolve a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `repetitions`.
    #[arg(long)]
    reps: Option<usize>,
}

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURES: u8 = 2;
const MAX_FAILURE_RATE: f64 = 0.1;

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.base_seed = s;
    }
    if let Some(n) = common.reps {
        cfg.repetitions = n;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn run(common: &Common) -> Result<f64, HarnessError> {
    let cfg = load(common)?;
    let resolved = harness::resolve(&cfg)?;
    let report = harness::run_experiment(&resolved);
    let a = &report.aggregate;
    println!(
        "runs {}  failed {}  mean final normalized gap {:.4e}  mean N_T {:.1}  runs with infeasible iterate {}",
        a.runs, a.failed_runs, a.mean_final, a.mean_n_total, a.runs_with_violation
    );
    if let Some(dir) = &cfg.output_dir {
        harness::write_artifacts(&resolved, &report, dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(report.failure_rate())
}

fn compare(common: &Common) -> Result<f64, HarnessError> {
    let cfg = load(common)?;
    let resolved = harness::resolve(&cfg)?;
    let report = harness::compare_sfw_ro(&resolved);
    for p in &report.pairs {
        println!(
            "seed {:>4}  sfw {:.4e} (N={})  ro {:.4e} (N={})",
            p.seed, p.sfw_final, p.sfw_n_total, p.ro_final, p.ro_n_total
        );
    }
    println!(
        "sfw not worse in {}/{} pairs",
        report.sfw_not_worse,
        report.pairs.len()
    );
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.clone(), source: e })?;
        export::write_json(&report, &dir.join("compare.json"))?;
        println!("wrote {}", dir.display());
    }
    Ok(report.failure_rate())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Compare(c) => compare(c),
        Command::ValidateConfig { config } => ExperimentConfig::load(config)
            .and_then(|cfg| harness::resolve(&cfg))
            .map(|r| {
                println!(
                    "ok: d = {}, m = {}, phi_delta = {:?}, C_n = {}, f* = {}",
                    r.dim(),
                    r.polytope.n_constraints(),
                    r.safety.phi,
                    r.safety.cn,
                    r.f_star
                );
                0.0
            }),
    };
    match result {
        Ok(rate) if rate > MAX_FAILURE_RATE => {
            log::error!("{:.0}% of runs failed", rate * 100.0);
            ExitCode::from(RUN_FAILURES)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e @ (HarnessError::Config(_) | HarnessError::Io { .. } | HarnessError::Problem(_) | HarnessError::Safety(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUN_FAILURES)
        }
    }
}
