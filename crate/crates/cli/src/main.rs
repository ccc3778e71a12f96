//! `homogflow cell|macro|micro|study --config <path> [--eps 1/m] [--out dir]`
//!
//! On failure a single line `error: kind=<kind> message="<text>"` goes to
//! stderr and the exit status is 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homogflow::config::parse_config;
use homogflow::run::{configure_threads, dispatch, parse_eps, Command};
use homogflow::{Error, Result};

#[derive(Parser)]
#[command(name = "homogflow", version, about = "Homogenization of Darcy flow in fissured media with imperfect contact")]
struct Cli {
    #[command(subcommand)]
    command: Action,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` of the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Action {
    /// Solve the unit-cell problems and write the homogenized data.
    Cell(Common),
    /// Solve the homogenized problem (needs the output of `cell`).
    Macro(Common),
    /// Solve the ε-resolved problem.
    Micro {
        #[command(flatten)]
        common: Common,
        /// Period `1/m`, as `1/8` or `0.125`; defaults to every entry of `eps_list`.
        #[arg(long)]
        eps: Option<String>,
    },
    /// Run the full convergence study.
    Study(Common),
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    configure_threads()?;
    let (command, common) = match cli.command {
        Action::Cell(c) => (Command::Cell, c),
        Action::Macro(c) => (Command::Macro, c),
        Action::Study(c) => (Command::Study, c),
        Action::Micro { common, eps } => {
            let eps = eps.as_deref().map(parse_eps).transpose()?;
            (Command::Micro { eps }, common)
        }
    };
    let mut config = parse_config(&common.config)?;
    if let Some(out) = common.out {
        config.output_dir = out;
    }
    dispatch(command, &config)
}

fn error_line(e: &Error) -> String {
    let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error: kind={} message=\"{}\"", e.kind(), message)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
