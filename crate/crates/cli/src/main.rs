use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehfl_core::harness::{self, AnalyzeRequest, SweepSpec, OUT_DIR_ENV};
use ehfl_core::{validate_config, Algorithm, Error, Execution};

#[derive(Parser)]
#[command(name = "ehfl", version, about = "Energy-harvesting federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run cells one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Print participation probabilities and the minimal epoch length.
    Analyze {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "G", default_value_t = 1)]
        g: usize,
        #[arg(long = "S")]
        s: u64,
        #[arg(long)]
        kappa: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long = "E-max", default_value_t = 25)]
        e_max: u64,
    },
}

fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf, Error> {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .or(flag)
        .ok_or_else(|| Error::InvalidParameter(format!("--out or {OUT_DIR_ENV} is required")))
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            algorithm,
            seed,
            out,
        } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(a) = algorithm {
                cfg.algorithm = a;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out_dir(out)?;
            let report = validate_config(&cfg);
            for w in report.warnings.iter().chain(&report.notes) {
                eprintln!("warning: {w}");
            }
            let result = harness::run(&cfg)?;
            harness::write_run(&result, &dir)?;
            println!(
                "{}: total energy {} over {} epochs -> {}",
                harness::run_id(&cfg),
                harness::fmt_sig9(result.total_energy()),
                result.metrics.len(),
                dir.display()
            );
        }
        Command::Sweep {
            config,
            grid,
            out,
            sequential,
        } => {
            let base = harness::load_config(&config)?;
            let spec = SweepSpec::from_grid_str(base, &std::fs::read_to_string(&grid)?)?;
            let dir = out_dir(out)?;
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let outcome = harness::sweep(&spec, exec);
            harness::write_sweep(&outcome, &dir)?;
            let done = outcome.results().count();
            println!(
                "{done}/{} cells completed -> {}",
                outcome.cells.len(),
                dir.display()
            );
            if done < outcome.cells.len() {
                eprintln!("see failures.csv for skipped and failed cells");
            }
        }
        Command::Analyze {
            n,
            g,
            s,
            kappa,
            delta,
            epsilon,
            e_max,
        } => {
            let report = harness::analyze(&AnalyzeRequest {
                num_clients: n,
                num_groups: g,
                slots_per_epoch: s,
                kappa,
                delta,
                epsilon,
                battery_capacity: e_max,
            })?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::RunDiverged { .. } | Error::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
