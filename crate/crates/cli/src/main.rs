use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oodlab::data::write_fixtures;
use oodlab::harness::{evaluate_weights, run_experiment, write_outputs, ExperimentConfig};
use oodlab::model::weights_from_text;
use oodlab::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "oodlab", version, about = "Train, score and evaluate open-set classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every split of an experiment config.
    Run { config: PathBuf },
    /// Evaluate saved weights on the first split of a config.
    Eval { weights: PathBuf, config: PathBuf },
    /// Write the IDX test fixtures into a directory.
    GenFixtures { dir: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("OODLAB_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.out_dir.clone(),
    }
}

fn run(config_path: &Path) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let (report, runs) = run_experiment(&config)?;
    let dir = out_dir(&config);
    write_outputs(&config, &dir, &report, &runs)?;
    print!("{}", report.to_csv());
    if report.partial() {
        let seeds: Vec<String> = report
            .splits
            .iter()
            .filter(|s| s.metrics.is_none())
            .map(|s| s.seed.to_string())
            .collect();
        return Err(Failure::new(
            EXIT_DIVERGED,
            format!(
                "training diverged for seed(s) {}; summary covers the remaining splits",
                seeds.join(", ")
            ),
        ));
    }
    Ok(())
}

fn eval(weights_path: &Path, config_path: &Path) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let text = std::fs::read_to_string(weights_path)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", weights_path.display())))?;
    let params =
        weights_from_text(&text).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", weights_path.display())))?;
    let report = evaluate_weights(&config, &params)?;
    let dir = out_dir(&config);
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    std::fs::write(dir.join(format!("{}_eval.csv", config.name)), report.to_csv()).map_err(Error::from)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Eval { weights, config } => eval(weights, config),
        Command::GenFixtures { dir } => write_fixtures(dir).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("oodlab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
