use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stratkit_cli::*;
use stratkit_sim::Param;

/// Exit status when a simulated cell's failure rate exceeds the configured threshold.
const EXIT_FAIL_RATE: u8 = 3;

#[derive(Parser)]
#[command(name = "stratkit", version, about = "Finely stratified experiments: blocking, assignment, estimation, simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block units on covariates and randomize treatment within blocks.
    Assign {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Block size.
        #[arg(long)]
        k: usize,
        /// Treated units per block.
        #[arg(long)]
        l: usize,
        /// Comma-separated covariate columns. `sorted` uses the first.
        #[arg(long, value_delimiter = ',', required = true)]
        covariates: Vec<String>,
        #[arg(long, value_enum, default_value = "sorted")]
        method: BlockMethod,
        #[arg(long)]
        seed: u64,
        /// Drop the n mod k units with the largest first covariate instead of failing.
        #[arg(long)]
        drop_remainder: bool,
    },
    /// Estimate a parameter from a completed experiment.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// ate, late, wate, qte or logodds.
        #[arg(long, default_value = "ate")]
        param: String,
        /// Treatment probability used at assignment.
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value = "y")]
        y_col: String,
        #[arg(long, default_value = "a")]
        treat_col: String,
        /// Take-up column (late).
        #[arg(long)]
        d_col: Option<String>,
        /// Known unit weights (wate).
        #[arg(long)]
        weight_col: Option<String>,
        /// Quantile level (qte).
        #[arg(long)]
        tau: Option<f64>,
        /// Block labels; requests the fine-stratification variance.
        #[arg(long)]
        block_col: Option<String>,
        /// none, quad or quad-kink.
        #[arg(long, default_value = "none")]
        basis: String,
        /// Covariate for --basis.
        #[arg(long)]
        x_col: Option<String>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Also write the report as CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a Monte Carlo grid from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Population variances for a built-in design.
    Oracle {
        #[arg(long)]
        model: u8,
        #[arg(long, default_value = "ate", value_parser = parse_param)]
        param: Param,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        /// Model 1 noise scale.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, value_enum, default_value = "auto")]
        method: OracleChoice,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_param(s: &str) -> std::result::Result<Param, String> {
    match s {
        "ate" => Ok(Param::Ate),
        "late" => Ok(Param::Late),
        other => Err(format!("unknown parameter '{other}' (expected ate or late)")),
    }
}

fn init_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("STRATKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("STRATKIT_THREADS must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Assign {
            input,
            output,
            k,
            l,
            covariates,
            method,
            seed,
            drop_remainder,
        } => {
            let args = AssignArgs {
                k,
                l,
                covariates,
                method,
                seed,
                drop_remainder,
            };
            let (out, sidecar) = cmd_assign(&input, &output, &args)?;
            eprintln!("assigned {} units in {} blocks", out.rows.len(), out.rows.len() / k);
            if let Some(path) = sidecar {
                eprintln!("dropped {} units, listed in {}", out.dropped.len(), path.display());
            }
        }
        Command::Estimate {
            input,
            param,
            eta,
            y_col,
            treat_col,
            d_col,
            weight_col,
            tau,
            block_col,
            basis,
            x_col,
            level,
            output,
        } => {
            let args = EstimateArgs {
                param,
                eta,
                y_col,
                treat_col,
                d_col,
                weight_col,
                tau,
                block_col,
                basis,
                x_col,
                level,
            };
            let report = cmd_estimate(&input, output.as_deref(), &args)?;
            print!("{}", report.to_text());
        }
        Command::Simulate { config, out_dir } => {
            let outcome = cmd_simulate(&config, &out_dir)?;
            print!("{}", std::fs::read_to_string(&outcome.markdown_path).unwrap_or_default());
            if outcome.failing_cells > 0 {
                eprintln!("{} cells exceeded the failure-rate threshold", outcome.failing_cells);
                return Ok(EXIT_FAIL_RATE);
            }
        }
        Command::Oracle {
            model,
            param,
            eta,
            sigma,
            method,
            draws,
            seed,
        } => {
            let args = OracleArgs {
                model,
                param,
                eta,
                sigma,
                method,
                draws,
                seed,
            };
            print!("{}", cmd_oracle(&args)?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
