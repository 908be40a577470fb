use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mifb::experiment::{self, Command, Experiment, ExperimentConfig, ExperimentError};

#[derive(Parser)]
#[command(name = "mifb", version, about = "Multi-step inertial forward-backward experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every schedule and write one trace CSV per schedule
    Run(Args),
    /// Compare iterations to tolerance and identification across schedules
    Compare(Args),
    /// Predicted against observed local rates
    Rates(Args),
}

#[derive(clap::Args)]
struct Args {
    config: PathBuf,
    /// Output directory, overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_plot: bool,
    /// Replaces the problem seed
    #[arg(long)]
    seed_override: Option<u64>,
}

fn run(command: Command, args: &Args) -> Result<i32, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.problem = cfg.problem.with_seed(seed);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let plot = cfg.output.plot && !args.no_plot;
    let exp = Experiment::new(cfg)?;
    let outcome = experiment::execute(command, &exp, &out, plot, Some(&args.config))?;
    print!("{}", outcome.summary);
    println!("wrote {} files to {}", outcome.files.len(), out.display());
    if let Some(e) = &outcome.status {
        eprintln!("error: {e}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Run(a) => (Command::Run, a),
        Cmd::Compare(a) => (Command::Compare, a),
        Cmd::Rates(a) => (Command::Rates, a),
    };
    let code = match run(command, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
