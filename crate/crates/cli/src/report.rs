use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::Serialize;

use envforge::analytics::{
    attempt_histogram, device_cost_report, epoch_cost, geometric_expectation, latency_stats, length_distribution,
    read_alignment_csv, reward_alignment, CostReport, DeviceCostReport, EpisodeTiming, GeometricExpectation, Regime,
    TableReport,
};
use envforge::rollout::TrajectoryRecord;
use envforge::synthesis::AttemptLog;

use crate::config::RunConfig;
use crate::{CliError, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Cost,
    Attempts,
    Alignment,
    Lengths,
    Latency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Real,
    Synth,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    kind: Kind,
    /// attempts: attempt_logs.jsonl; alignment: CSV; lengths/latency: trajectory JSONL.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_envs: u64,
    #[arg(long, default_value_t = 12)]
    rollouts: u64,
    #[arg(long, value_enum, default_value_t = RegimeArg::Real)]
    regime: RegimeArg,
    #[arg(long, default_value_t = 100)]
    devices: u64,
    #[arg(long, default_value_t = 24.0)]
    hours: f64,
    #[arg(long, default_value_t = 20)]
    clip: usize,
    /// Per-attempt pass probability to compare the attempt histogram against.
    #[arg(long)]
    p: Option<f64>,
}

#[derive(Serialize)]
struct CostOutput {
    epoch: CostReport<f64>,
    device: DeviceCostReport<f64>,
}

#[derive(Serialize)]
struct AttemptsOutput {
    #[serde(flatten)]
    histogram: envforge::analytics::AttemptHistogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected: Option<GeometricExpectation>,
}

fn input(args: &Args) -> Result<&PathBuf, CliError> {
    args.input.as_ref().ok_or(CliError::Usage("--input is required for this report".into()))
}

fn open(path: &PathBuf) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &PathBuf) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::Usage(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, args: Args) -> Result<Output, CliError> {
    match args.kind {
        Kind::Cost => {
            if args.n_envs == 0 || args.rollouts == 0 {
                return Err(CliError::Usage("--n-envs and --rollouts must be positive".into()));
            }
            if !(args.hours.is_finite() && args.hours >= 0.0) {
                return Err(CliError::Usage("--hours must be non-negative".into()));
            }
            let regime = match args.regime {
                RegimeArg::Real => Regime::Real,
                RegimeArg::Synth => Regime::Synth,
            };
            let out = CostOutput {
                epoch: epoch_cost(&cfg.cost, args.n_envs, args.rollouts, regime),
                device: device_cost_report(&cfg.cost, args.devices, args.hours),
            };
            let table = format!("{}\n{}", out.epoch.to_table(), out.device.to_table());
            Ok(Output::new(&out, table, true))
        }
        Kind::Attempts => {
            let logs: Vec<AttemptLog> = read_jsonl(input(&args)?)?;
            let k = logs.iter().map(|l| l.attempts.len() as u32).max().unwrap_or(cfg.synth.k).max(cfg.synth.k);
            let expected = match args.p {
                Some(p) if !(0.0..=1.0).contains(&p) => return Err(CliError::Usage("--p must be in [0, 1]".into())),
                Some(p) => Some(geometric_expectation(p, k)),
                None => None,
            };
            let out = AttemptsOutput { histogram: attempt_histogram(&logs), expected };
            Ok(Output::new(&out, out.histogram.to_table(), true))
        }
        Kind::Alignment => {
            let recs = read_alignment_csv(open(input(&args)?)?).map_err(CliError::Usage)?;
            let r = reward_alignment(&recs);
            Ok(Output::new(&r, r.to_table(), true))
        }
        Kind::Lengths => {
            if args.clip == 0 {
                return Err(CliError::Usage("--clip must be at least 1".into()));
            }
            let recs: Vec<TrajectoryRecord> = read_jsonl(input(&args)?)?;
            let lengths: Vec<usize> = recs.iter().map(TrajectoryRecord::steps_taken).collect();
            let r = length_distribution(&lengths, args.clip);
            Ok(Output::new(&r, r.to_table(), true))
        }
        Kind::Latency => {
            let recs: Vec<TrajectoryRecord> = read_jsonl(input(&args)?)?;
            let timings: Vec<EpisodeTiming> = recs
                .iter()
                .map(|r| EpisodeTiming { wall_clock_s: r.wall_clock_s, step_count: r.steps_taken() })
                .collect();
            let r = latency_stats(&timings);
            Ok(Output::new(&r, r.to_table(), true))
        }
    }
}
