use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sfc_sched::scenario::{parse_scenario, Scenario};
use sfc_sched::sim::run;
use sfc_sched::sweep::{emit_results, run_sweep, OutputFormat, SweepVar};
use sfc_sched::{Policy, Result, SchedError};

#[derive(Parser)]
#[command(name = "sfc-sched", version, about = "Schedule micro-service chains over edge and core clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Structured => OutputFormat::Structured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Var {
    Demand,
    Load,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override the scenario seed. Takes precedence over SFC_SCHED_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// fws, lfff, mfff, lfdt or mfdt.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Sweep demand or background load across policies.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "demand")]
        var: Var,
        /// Restrict the sweep to one policy.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

fn load(common: &Common) -> Result<Scenario> {
    let mut scenario = match &common.scenario {
        Some(path) => parse_scenario(path)?,
        None => Scenario::default(),
    };
    scenario.apply_env_seed()?;
    if let Some(seed) = common.seed {
        scenario.workload.seed = seed;
    }
    Ok(scenario)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_report(report: &sfc_sched::MetricsReport, format: Format, mut out: impl Write) -> Result<()> {
    match format {
        Format::Structured => {
            serde_json::to_writer_pretty(&mut out, report).map_err(|e| SchedError::Io(e.to_string()))?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "policy,requests,completed,dropped,traffic_kb,turnaround_ms,satisfied_pct,cost_per_hour,machines,makespan_ms")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                report.policy,
                report.requests,
                report.completed,
                report.dropped,
                report.total_traffic_kb,
                report.avg_turnaround_ms,
                report.satisfied_pct,
                report.total_cost_per_hour,
                report.machines,
                report.makespan_ms
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    parse_scenario(path)?;
    println!("{}: ok", path.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, policy } => {
            let mut scenario = load(&common)?;
            if let Some(p) = policy {
                scenario.policy = p.parse()?;
            }
            let output = run(&scenario)?;
            write_report(&output.report, common.format, sink(&common.out)?)
        }
        Command::Sweep { common, var, policy } => {
            let mut scenario = load(&common)?;
            if let Some(p) = policy {
                scenario.sweep.policies = vec![p.parse::<Policy>()?];
            }
            let var = match var {
                Var::Demand => SweepVar::Demand,
                Var::Load => SweepVar::Load,
            };
            let rows = run_sweep(&scenario, var)?;
            let mut out = sink(&common.out)?;
            emit_results(&rows, common.format.into(), &mut out)?;
            out.flush()?;
            Ok(())
        }
        Command::Validate { scenario } => validate(&scenario),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
