use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ranslice_core::config::{parse_config, ExperimentConfig};
use ranslice_core::experiment::{run_experiment, ExperimentSummary};
use ranslice_core::Error;

const DEFAULT_OUT: &str = "results";

#[derive(Parser)]
#[command(
    name = "ranslice",
    version,
    about = "Q-learning RAN slicing under learned jamming: runs, sweeps and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config that describes exactly one (attack, budget, defense) cell.
    Run(RunArgs),
    /// Run every cell of a grid config.
    Sweep(RunArgs),
    /// Parse and check a config, then print its resolved form.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Run this single seed instead of the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`; default `results`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of simulations run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => execute(&args, true),
        Command::Sweep(args) => execute(&args, false),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn validate(path: &Path) -> Result<ExitCode, Error> {
    let cfg = parse_config(path)?;
    print!("{}", cfg.canonical());
    println!(
        "# cells: {}, seeds: {}, hash: {}",
        cfg.cells().len(),
        cfg.seeds.len(),
        cfg.hash()
    );
    Ok(ExitCode::SUCCESS)
}

fn execute(args: &RunArgs, single: bool) -> Result<ExitCode, Error> {
    let mut cfg: ExperimentConfig = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let cells = cfg.cells().len();
    if single && cells != 1 {
        return Err(Error::config(format!(
            "`run` needs exactly one cell but the config has {cells}; use `sweep`"
        )));
    }
    let jobs = match args.jobs {
        Some(0) => return Err(Error::config("--jobs must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    log::info!(
        "{cells} cell(s) x {} seed(s) on {jobs} worker(s) -> {}",
        cfg.seeds.len(),
        out.display()
    );
    let summary = run_experiment(&cfg, &out, jobs)?;
    print_summary(&summary);
    if summary.failed_runs() > 0 {
        eprintln!(
            "error: {} run(s) aborted; see cells/*.json",
            summary.failed_runs()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(summary: &ExperimentSummary) {
    println!(
        "{:<28} {:>6} {:>10} {:>10} {:>10} {:>12}",
        "cell", "seeds", "benchmark", "recovery", "max_red", "total_red"
    );
    for cell in &summary.cells {
        match cell.means() {
            Some(m) => println!(
                "{:<28} {:>6} {:>10.3} {:>10.1} {:>10.3} {:>12.3}",
                cell.cell.name(),
                cell.runs.len(),
                m.benchmark,
                m.recovery_time,
                m.max_reduction,
                m.total_reduction
            ),
            None => println!("{:<28} {:>6} (all runs failed)", cell.cell.name(), 0),
        }
    }
    println!("config hash {}", summary.config_hash);
}
