//! Repeated runs across demand or background-load levels, and result
//! emission as CSV or JSON.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::scenario::Scenario;
use crate::sim::{run_with_policy, MetricsReport};

pub const METRICS: [&str; 4] = ["cost_per_hour", "satisfied_pct", "traffic_kb", "turnaround_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    /// Number of requests per run.
    Demand,
    /// Background link utilization.
    Load,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::Demand => "demand",
            SweepVar::Load => "load",
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "demand" => Ok(SweepVar::Demand),
            "load" => Ok(SweepVar::Load),
            _ => Err(SchedError::Parse(format!("unknown sweep variable `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub metric: String,
    pub mean: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    /// JSON array of row objects.
    Structured,
}

impl FromStr for OutputFormat {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "structured" | "json" => Ok(OutputFormat::Structured),
            _ => Err(SchedError::Parse(format!("unknown output format `{s}`"))),
        }
    }
}

/// The scenario at one sweep point for repetition `rep`.
pub fn point_scenario(base: &Scenario, var: SweepVar, value: f64, rep: usize) -> Scenario {
    let mut s = base.clone();
    match var {
        SweepVar::Demand => s.workload.request_count = value as usize,
        SweepVar::Load => s.workload.background_load_fraction = value,
    }
    s.workload.seed = base.workload.seed.wrapping_add(rep as u64);
    s
}

pub fn metric_value(report: &MetricsReport, metric: &str) -> f64 {
    match metric {
        "traffic_kb" => report.total_traffic_kb,
        "turnaround_ms" => report.avg_turnaround_ms,
        "satisfied_pct" => report.satisfied_pct,
        "cost_per_hour" => report.total_cost_per_hour,
        other => panic!("unknown metric {other}"),
    }
}

/// Means over `sweep.repetitions` seeds for every policy, point and metric.
/// Runs execute in parallel; rows come back sorted by (policy, value, metric).
pub fn run_sweep(scenario: &Scenario, var: SweepVar) -> Result<Vec<ResultRow>> {
    scenario.validate()?;
    let sweep = &scenario.sweep;
    let points: Vec<f64> = match var {
        SweepVar::Demand => sweep.demand_points.iter().map(|&d| d as f64).collect(),
        SweepVar::Load => sweep.load_points.clone(),
    };
    let mut jobs = Vec::new();
    for &policy in &sweep.policies {
        for &value in &points {
            for rep in 0..sweep.repetitions {
                jobs.push((policy, value, rep));
            }
        }
    }
    let reports: Vec<MetricsReport> = jobs
        .par_iter()
        .map(|&(policy, value, rep)| run_with_policy(&point_scenario(scenario, var, value, rep), policy).map(|o| o.report))
        .collect::<Result<_>>()?;

    let reps = sweep.repetitions;
    let mut rows = Vec::with_capacity(reports.len() / reps * METRICS.len());
    for (chunk, job) in reports.chunks(reps).zip(jobs.chunks(reps)) {
        let (policy, value, _) = job[0];
        for metric in METRICS {
            let mean = chunk.iter().map(|r| metric_value(r, metric)).sum::<f64>() / reps as f64;
            rows.push(ResultRow {
                policy: policy.name().to_string(),
                sweep_var: var.name().to_string(),
                sweep_value: value,
                metric: metric.to_string(),
                mean,
                reps,
            });
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        a.policy
            .cmp(&b.policy)
            .then_with(|| a.sweep_value.total_cmp(&b.sweep_value))
            .then_with(|| a.metric.cmp(&b.metric))
    });
}

/// Writes rows in sorted order. Output is a pure function of the rows.
pub fn emit_results(rows: &[ResultRow], format: OutputFormat, out: impl Write) -> Result<()> {
    if rows.is_empty() {
        return Err(SchedError::validation("rows", "nothing to emit"));
    }
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in &sorted {
                w.serialize(row).map_err(|e| SchedError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        OutputFormat::Structured => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &sorted).map_err(|e| SchedError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn parse_results(input: impl Read, format: OutputFormat) -> Result<Vec<ResultRow>> {
    match format {
        OutputFormat::Csv => csv::Reader::from_reader(input)
            .deserialize()
            .map(|r| r.map_err(|e| SchedError::Parse(e.to_string())))
            .collect(),
        OutputFormat::Structured => serde_json::from_reader(input).map_err(|e| SchedError::Parse(e.to_string())),
    }
}
