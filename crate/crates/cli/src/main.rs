mod config;
mod report;
mod rollout;
mod synth;
mod train;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{parse_ports, Overrides, ProviderKind, RunConfig};

#[derive(Parser)]
#[command(name = "envforge", version, about = "Synthesize, verify and train on task-conditioned web environments")]
struct Cli {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long, global = true)]
    bundles_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// Maximum concurrently running environments.
    #[arg(long, global = true)]
    max_live: Option<usize>,
    /// Port range for environments, e.g. 20000-20999.
    #[arg(long, global = true, value_parser = parse_ports)]
    ports: Option<(u16, u16)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one environment per task from its recorded trace.
    Synth(synth::Args),
    /// Re-run static reflection and the golden path on a bundle.
    Verify(verify::Args),
    /// Roll out a policy on one bundle and dump trajectories.
    Rollout(rollout::Args),
    /// Train the toy policy with GRPO on every bundle under --bundles-dir.
    Train(train::Args),
    /// Analytics reports.
    Report(report::Args),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs: exit 2.
    Usage(String),
    /// The operation ran and failed: exit 1.
    Failed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

/// What a subcommand prints. `ok == false` exits 1 after printing.
pub struct Output {
    json: serde_json::Value,
    table: String,
    ok: bool,
}

impl Output {
    pub fn new(value: &impl Serialize, table: String, ok: bool) -> Self {
        Self { json: serde_json::to_value(value).expect("reports serialize"), table, ok }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        bundles_dir: cli.bundles_dir,
        provider: cli.provider,
        max_live: cli.max_live,
        ports: cli.ports,
    };
    let result = RunConfig::load(cli.config.as_deref(), overrides).and_then(|cfg| match cli.command {
        Command::Synth(a) => synth::run(&cfg, a),
        Command::Verify(a) => verify::run(&cfg, a),
        Command::Rollout(a) => rollout::run(&cfg, a),
        Command::Train(a) => train::run(&cfg, a),
        Command::Report(a) => report::run(&cfg, a),
    });
    match result {
        Ok(out) => {
            match cli.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("json")),
                Format::Table => print!("{}", out.table),
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Failed(_) => 1,
            })
        }
    }
}
