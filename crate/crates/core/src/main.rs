use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rival::binning::{optimize_bins, DEFAULT_ALPHA_RANGE};
use rival::estimators::{grassberger_decrease_batch, grassberger_error_batch, miller_madow, extent_squared};
use rival::harness::{emit_results, run_experiment, ExperimentConfig};
use rival::{BinnedMeasure, FoxCriterion};

#[derive(Parser)]
#[command(name = "rival", version, about = "Rival Monte Carlo sample allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated allocation experiment and write summary.csv and sizes.csv.
    RunExperiment {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the histogram bin count by maximum marginal likelihood.
    BinWidth {
        /// Newline-separated values.
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        min: f64,
        #[arg(long, allow_hyphen_values = true)]
        max: f64,
        #[arg(long)]
        k_min: u32,
        #[arg(long)]
        k_max: u32,
        #[arg(long, default_value_t = DEFAULT_ALPHA_RANGE.0)]
        alpha_min: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA_RANGE.1)]
        alpha_max: f64,
    },
    /// Evaluate an error estimate on a measure dump (`key<TAB>count` lines).
    Estimate {
        dump: PathBuf,
        #[arg(long, value_enum)]
        criterion: CriterionArg,
        /// Fox significance level.
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Second-order Grassberger correction for the error.
        #[arg(long)]
        second_order: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Grassberger,
    MillerMadow,
    Fox,
    Extent,
}

enum Failure {
    Config(String),
    Io(String),
}

impl Failure {
    fn config(e: impl ToString) -> Self {
        Failure::Config(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::RunExperiment { config, out } => {
            let config = ExperimentConfig::from_json(&read(&config)?).map_err(Failure::config)?;
            let result = run_experiment(&config).map_err(|e| {
                if e.is_config() {
                    Failure::config(e)
                } else {
                    Failure::Io(e.to_string())
                }
            })?;
            emit_results(&result, &out).map_err(|e| Failure::Io(e.to_string()))?;
        }
        Command::BinWidth {
            data,
            min,
            max,
            k_min,
            k_max,
            alpha_min,
            alpha_max,
        } => {
            let values = read(&data)?
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    l.trim()
                        .parse::<f64>()
                        .map_err(|e| Failure::Config(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let fit = optimize_bins(&values, min, max, k_min..=k_max, (alpha_min, alpha_max)).map_err(Failure::config)?;
            println!("{} {} {}", fit.bins, fit.alpha, fit.log_ml);
        }
        Command::Estimate {
            dump,
            criterion,
            delta,
            second_order,
        } => {
            let measure = BinnedMeasure::from_dump(&read(&dump)?).map_err(Failure::config)?;
            match criterion {
                CriterionArg::Grassberger => {
                    let e = grassberger_error_batch(&measure, second_order).map_err(Failure::config)?;
                    let d = grassberger_decrease_batch(&measure).map_err(Failure::config)?;
                    println!("{e} {d}");
                }
                CriterionArg::MillerMadow => println!("{}", miller_madow(&measure).map_err(Failure::config)?),
                CriterionArg::Fox => {
                    let mut fox = FoxCriterion::with_state(delta, measure.occupied_bins() as u64, measure.total())
                        .map_err(Failure::config)?;
                    let (e, d) = fox.error_and_decrease();
                    println!("{e} {d}");
                }
                CriterionArg::Extent => println!("{}", extent_squared(&measure).map_err(Failure::config)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
