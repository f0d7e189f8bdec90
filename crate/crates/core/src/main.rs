use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stcos::pipeline::{run, PipelineConfig};
use stcos::Error;

#[derive(Parser)]
#[command(name = "stcos", version, about = "Spatio-temporal change of support for areal survey estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic estimates for the configured sources.
    Simulate(Common),
    /// Ingest inputs and build the model data.
    Prepare(Common),
    /// Run the Gibbs sampler on prepared data.
    Fit(Common),
    /// Summarize the fitted model on the target geography.
    Report(Common),
    /// Prepare, fit and report in one go.
    Run(Common),
}

type Stage = fn(&PipelineConfig) -> Result<(), Error>;

fn execute(cmd: Command) -> Result<(), Error> {
    let (common, stage): (Common, Stage) = match cmd {
        Command::Simulate(c) => (c, |cfg| run::run_simulate(cfg).map(|_| ())),
        Command::Prepare(c) => (c, |cfg| run::run_prepare(cfg).map(|_| ())),
        Command::Fit(c) => (c, |cfg| run::run_fit(cfg).map(|_| ())),
        Command::Report(c) => (c, |cfg| run::run_report(cfg).map(|_| ())),
        Command::Run(c) => (c, |cfg| run::run_all(cfg).map(|_| ())),
    };
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    log::info!("config {} (seed {})", common.config.display(), cfg.seed);
    stage(&cfg)?;
    log::info!("outputs in {}", cfg.output_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(buf, "[{} {}] {}", buf.timestamp_millis(), record.level(), record.args())
        })
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
