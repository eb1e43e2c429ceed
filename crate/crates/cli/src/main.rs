use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rndop_cli::commands::{self, Outcome};
use rndop_cli::config::{self, Overrides, Preset};
use rndop_cli::CliError;
use rndop_core::placement::{Method, Mode};

#[derive(Parser)]
#[command(name = "rndop", version, about = "Anchor placement by range-normalized DOP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (schema v1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Master seed; overrides the config file and RNDOP_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Worker threads for Monte-Carlo trials and targets; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Add anchors to one initial configuration; writes placement.json and rndop_vs_k.csv.
    Place,
    /// Monte-Carlo campaign; writes campaign.json, error_cdf.csv and timing.csv.
    Mc,
    /// RNDOP and far-field DOP over a direction grid; writes dop_field.csv.
    Dopfield,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rnd,
    Tr,
    Eig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rnd => Method::Rnd,
            MethodArg::Tr => Method::Tr,
            MethodArg::Eig => Method::Eig,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoD => Mode::TwoD,
            ModeArg::ThreeD => Mode::ThreeD,
        }
    }
}

fn report(err: &CliError) {
    let line = serde_json::json!({
        "level": "error",
        "kind": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
    });
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let overrides = Overrides {
        preset: cli.preset,
        seed: cli.seed,
        out: cli.out,
        method: cli.method.map(Into::into),
        mode: cli.mode.map(Into::into),
        env_seed: std::env::var(config::SEED_ENV).ok(),
    };
    let config = config::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Place => commands::place(&config),
        Command::Mc => commands::mc(&config, cli.jobs),
        Command::Dopfield => commands::dopfield(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            match outcome.error {
                None => ExitCode::SUCCESS,
                Some(err) => {
                    report(&err);
                    ExitCode::from(err.exit_code() as u8)
                }
            }
        }
        Err(err) => {
            report(&err);
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
